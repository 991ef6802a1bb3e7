//! Two-tier local electricity market simulator.
//!
//! Secondary markets clear DER-coordinated-asset (DCA) flexibility bids every
//! minute with a four-stage lexicographic program. Every five minutes a primary
//! market clears the aggregated bids on a second-order-cone DistFlow OPF whose
//! nodal-balance duals are the distribution LMPs (d-LMPs).

pub mod commitment;
pub mod convex;
pub mod data;
pub mod grid;
pub mod orchestrator;
pub mod primary;
pub mod secondary;
pub mod validate;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/grid.md")]
    pub struct Grid;
    #[doc = include_str!("../../../book/src/convex.md")]
    pub struct Convex;
    #[doc = include_str!("../../../book/src/secondary.md")]
    pub struct Secondary;
    #[doc = include_str!("../../../book/src/commitment.md")]
    pub struct Commitment;
    #[doc = include_str!("../../../book/src/primary.md")]
    pub struct Primary;
    #[doc = include_str!("../../../book/src/orchestrator.md")]
    pub struct Orchestrator;
    #[doc = include_str!("../../../book/src/data.md")]
    pub struct Data;
}
