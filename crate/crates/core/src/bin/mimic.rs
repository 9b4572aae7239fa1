fn main() {
    std::process::exit(shallow_mimic::harness::run(std::env::args_os()));
}
