//! Data-side machinery for controllable, longitudinal chest X-ray report
//! generation.
//!
//! The library covers everything between raw report text plus precomputed
//! anatomical token vectors and a scored evaluation run:
//!
//! * [`corpus`] — section extraction, sentence-anatomy annotations, and the
//!   canonical report data model.
//! * [`longitudinal`] — per-patient study ordering, prior-scan selection and
//!   current/prior token alignment.
//! * [`anatomy`] — valid sentence-anatomy subset discovery (connected
//!   components of the sentence/region overlap graph) and the dropout
//!   sampler built on top of it.
//! * [`fusion`] — the current/prior projection module (FC1 → BN → FC2) and
//!   multimodal input assembly, with a pluggable generator seam.
//! * [`metrics`] — BLEU, ROUGE-L, a METEOR-style alignment score, clinical
//!   efficiency (CE) metrics with four-class collapse, and report length
//!   distributions.
//! * [`synth`] — deterministic synthetic corpus generation with a ground
//!   truth sidecar for oracle testing.
//! * [`pipeline`] — end-to-end orchestration with a reproducible run
//!   manifest.
//!
//! All randomness flows from an explicit seed through [`seed::derive_seed`];
//! nothing reads ambient entropy, so every output is reproducible from
//! (inputs, config, seed).

pub mod anatomy;
pub mod corpus;
pub mod fusion;
pub mod io;
pub mod longitudinal;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod vocab;

pub use corpus::{AnnotatedReport, AnatomicalTokenSet, SentenceAnatomyPair};
pub use vocab::{FindingVocabulary, RegionVocabulary};
