//! Runners for the bias experiments, each producing a [`Report`].

pub mod bitfit;
pub mod classifier;
pub mod equivalence;
pub mod gradcheck;
pub mod lm;
pub mod mutation;
pub mod report;
pub mod stats;
pub mod train;

pub use bitfit::{bitfit_report, compare_bitfit, run_bitfit, BitfitConfig};
pub use classifier::{classifier_mutation_report, run_classifier_mutation, ClassifierConfig, ClassifierMutationConfig};
pub use equivalence::{equivalence_report, run_equivalence_suite, EquivalenceConfig, EquivalenceResult};
pub use gradcheck::{gradcheck_report, run_gradcheck, GradcheckConfig, GradcheckResult};
pub use lm::{lm_ablation_report, run_lm_ablation, AblationReport, LmConfig};
pub use mutation::{mutation_report, run_mutation_experiment, x_star, MutationConfig, ToleranceEntry, ToleranceReport};
pub use report::{Report, Table};
pub use train::{train, TrainConfig};
pub use stats::{welch_t_test, WelchTest};
