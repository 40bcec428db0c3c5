//! File formats, run configuration and command-line driver for
//! [`kappaface_core`].
//!
//! | file | content |
//! |------|---------|
//! | `*.kfd` | dataset: inputs, labels, prototypes, concentrations, populations |
//! | `*.kmm` | checkpoint: embedding network and classifier weights |
//! | `*.kmb` | memory-buffer snapshot |
//! | `*.tsv` | pair lists and ROC curves |
//! | `*.csv` | per-epoch metrics and per-class margin tables |

pub mod cli;
pub mod config;
pub mod fmt;
pub mod formats;
