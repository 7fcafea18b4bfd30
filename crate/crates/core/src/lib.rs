//! Closed-loop evolution of four-oil droplet recipes.
//!
//! The crate covers the numerical side of the loop: a genetic algorithm over
//! recipe genomes ([`ga`]), a synthetic droplet arena standing in for the wet
//! experiment ([`arena`]), frame-to-frame droplet tracking ([`tracking`]) and
//! behavior scoring ([`fitness`]), kernel ridge regression landscapes with
//! fitness-island mapping ([`landscape`]), and the statistics used to judge
//! evolutionary progress ([`analysis`]).
//!
//! Numeric code that does not draw random numbers is generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below pin the common `f64` instantiations.

pub mod analysis;
pub mod arena;
pub mod fitness;
pub mod formats;
pub mod formulation;
pub mod ga;
pub mod landscape;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tracking;

pub use scalar::Scalar;

pub type Formulation = formulation::Formulation<f64>;
pub type Detection = arena::Detection<f64>;
pub type DetectionFrame = arena::DetectionFrame<f64>;
pub type Trajectory = tracking::Trajectory<f64>;
pub type TrajectorySet = tracking::TrajectorySet<f64>;
pub type KernelModel = landscape::KernelModel<f64>;
pub type FaceLattice = landscape::FaceLattice<f64>;
pub type IslandMap = landscape::IslandMap;
pub type SomGrid = analysis::SomGrid<f64>;

pub type KernelModelF32 = landscape::KernelModel<f32>;
pub type TrajectorySetF32 = tracking::TrajectorySet<f32>;
