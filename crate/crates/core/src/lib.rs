//! Interpretable knowledge tracing.
//!
//! The pipeline fits classical BKT per skill, derives five human-readable
//! features for every attempt (skill, mastery, problem difficulty and two
//! ability profiles), and predicts next-attempt correctness with a
//! tree-augmented naive Bayes classifier whose CPTs double as the explanation.
//!
//! ```no_run
//! use eikt::{eval, ingest};
//!
//! let path = "skill_builder.csv";
//! let file = std::fs::File::open(path).map_err(|e| eikt::Error::io(path, e))?;
//! let parsed = ingest::parse_interactions(file, &ingest::Schema::default())?;
//! let records = ingest::clean(parsed.rows).records;
//! let report = eval::cross_validate(&records, 5, 42, &eval::PipelineConfig::default())?;
//! println!("{}", report.to_table());
//! # Ok::<(), eikt::Error>(())
//! ```

pub mod bkt;
pub mod error;
pub mod eval;
pub mod features;
pub mod ids;
pub mod ingest;
pub mod synth;
pub mod tan;

pub use error::{Error, Result};
pub use ids::{ProblemId, SkillId, StudentId};
