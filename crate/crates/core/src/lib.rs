//! Market-zone partitioning of transmission networks from nodal prices under
//! wind scenarios.

pub mod case;
pub mod consensus;
pub mod lp;
pub mod opf;
pub mod partition;
pub mod pipeline;
pub mod ward;
pub mod wind;
