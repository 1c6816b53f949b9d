//! Orchestration: run configs, dataset transforms, recognizer training, the
//! subcommands and the toy curriculum experiment.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiment;
pub mod proxy;
pub mod train;

pub use commands::{run, Command};
pub use config::{RunConfig, Scale, StageSpec};
pub use data::{crop_expand, extra_class, mix_all_in_one, to_real_proxy};
pub use experiment::{run_curriculum, CurriculumOutcome, CurriculumRun, CurriculumSetup};
pub use proxy::DomainProxy;
pub use train::{check_labels, train_recognizer, train_step, EpochLog, Stage};
