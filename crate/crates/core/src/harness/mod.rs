//! Experiment orchestration and the `mimic` command line.

mod cli;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod stats;

pub use cli::{cli, run};
pub use commands::{Regime, SweepRow, SWEEP_HEADER};
pub use config::ExperimentConfig;

/// The sub-commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainTeacher,
    TrainBaseline,
    Distill,
    Eval,
    SweepParams,
    SweepTeacher,
    Absorb,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::TrainTeacher,
        Command::TrainBaseline,
        Command::Distill,
        Command::Eval,
        Command::SweepParams,
        Command::SweepTeacher,
        Command::Absorb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::TrainTeacher => "train-teacher",
            Command::TrainBaseline => "train-baseline",
            Command::Distill => "distill",
            Command::Eval => "eval",
            Command::SweepParams => "sweep-params",
            Command::SweepTeacher => "sweep-teacher",
            Command::Absorb => "absorb",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::TrainTeacher => "Train one teacher per seed",
            Command::TrainBaseline => "Train the shallow student spec on hard labels",
            Command::Distill => "Build a transfer set and train mimic students",
            Command::Eval => "Print the error rate of a model on a labeled CSV",
            Command::SweepParams => "Direct vs. mimic students across widths",
            Command::SweepTeacher => "Students distilled from a teacher-quality ladder",
            Command::Absorb => "Fold a linear bottleneck into the next layer",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}
