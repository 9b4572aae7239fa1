//! Logits that differ by a constant give identical probabilities, so
//! probability-space losses cannot see the difference but the logit loss can.

use shallow_mimic::loss::{kl_mimic, l2_logit, l2_prob, xent_softmax};
use shallow_mimic::nn::softmax;
use shallow_mimic::{Matrix, Result};

fn main() -> Result<()> {
    let a = Matrix::from_rows(&[[10.0, 20.0, 30.0]])?;
    let b = Matrix::from_rows(&[[-10.0, 0.0, 10.0]])?;
    println!("softmax(a) = {:?}", softmax(a.row(0))?);
    println!("softmax(b) = {:?}", softmax(b.row(0))?);
    println!("l2 on probabilities: {:.3e}", l2_prob(&a, &b)?.0);
    println!("KL(teacher || student): {:.3e}", kl_mimic(&a, &b)?.0);
    println!("l2 on logits: {}", l2_logit(&a, &b)?.0);

    let (loss, grad) = l2_logit(&Matrix::from_rows(&[[1.0, 2.0]])?, &Matrix::zeros(1, 2))?;
    println!("l2 logit of [1, 2] vs 0: loss {loss}, gradient {:?}", grad.as_slice());
    let (loss, grad) = xent_softmax(&b, &[2])?;
    println!("cross-entropy of b with label 2: loss {loss:.6}, gradient {:?}", grad.as_slice());
    Ok(())
}
