//! Monte Carlo localization on OpenStreetMap road networks.
//!
//! The library localizes a ground vehicle using only a road map, wheel
//! odometry, and LIDAR point clouds in which each point carries a binary
//! road / non-road label. A particle filter propagates pose hypotheses with
//! a noisy bicycle model and weights them by how well the labeled points
//! agree with a precomputed distance-to-nearest-road-edge field.
//!
//! Modules, roughly bottom-up:
//!
//! - [`map_model`]: OSM extraction, local tangent-plane projection, road graph.
//! - [`distance_field`]: rasterized distance-to-road field, MCDF file format.
//! - [`range_projection`]: spherical projection of clouds to range images and
//!   label backprojection.
//! - [`motion_model`]: bicycle kinematics, odometry integration, noisy
//!   propagation.
//! - [`measurement_model`]: label-conditioned distance functions and pose
//!   scoring.
//! - [`particle_filter`]: initialization, step loop, systematic resampling,
//!   estimates, scenario replay.
//! - [`scenario_sim`]: synthetic ground truth, odometry corruption, scan
//!   synthesis.
//! - [`io`]: file formats (clouds, odometry, traces, scenario dirs, PGM).

pub mod distance_field;
pub mod io;
pub mod map_model;
pub mod measurement_model;
pub mod motion_model;
pub mod particle_filter;
pub mod range_projection;
pub mod rng;
pub mod scenario_sim;
