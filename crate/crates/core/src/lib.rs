//! Traffic profiling core.
//!
//! Everything in this crate is pure computation over bytes and numbers:
//! link-layer frame decoding, TCP/UDP sessionization, HTTP/TLS parsing,
//! payload inspection, per-session feature extraction, domain enrichment
//! through a pluggable provider, per-subject aggregation and the
//! tree-ensemble learning stack (ANOVA-F selection, random forest, extra
//! trees, leave-one-out evaluation).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, capture
//! reading, concurrency and the command line live in the `trafprof` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod domain;
pub mod dpi;
pub mod features;
pub mod http;
pub mod labels;
pub mod ml;
pub mod packet;
pub mod session;
pub mod stats;
pub mod subject;
pub mod summary;
pub mod tls;

pub use dataset::{Dataset, FeatureCategory, FeatureSchema, SubjectRecord};
pub use domain::{DomainInfo, DomainProvider, Taxonomy};
pub use features::{SessionFeatures, StatFeatures};
pub use labels::{LabelName, LabelSet};
pub use packet::{Packet, TcpFlags, Transport};
pub use session::{CloseReason, Session, Sessionizer};
pub use subject::SubjectMap;
