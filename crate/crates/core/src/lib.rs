//! Global structure-from-motion from verified two-view feature matches.
//!
//! The engine takes a match database (images, camera groups, per-pair point
//! correspondences with a verified fundamental or homography matrix) and
//! produces camera intrinsics, global poses, and a sparse point cloud. All
//! pose optimization is first-order, and every per-iteration cost is linear
//! in the number of image pairs rather than the number of 3D points: the
//! epipolar refinement stage aggregates each pair's correspondences into a
//! 9x9 quadratic once, after which gradient steps never touch points.
//!
//! Stages, in pipeline order:
//! 1. ingest + connectivity filtering ([`ingest`])
//! 2. distortion and focal search, calibration ([`intrinsics`])
//! 3. relative pose decomposition ([`geometry`])
//! 4. global rotation init + refinement ([`rotation`])
//! 5. track building and match completion ([`tracks`])
//! 6. relative translation re-estimation + L1 center alignment ([`translation`])
//! 7. IRLS epipolar adjustment, optional focal refinement ([`epipolar`])
//! 8. triangulation and filtering ([`reconstruct`])
//!
//! [`synth`] generates ground-truth scenes in the ingest format and is the
//! oracle for the test suites; [`metrics`] evaluates pose accuracy.

pub mod epipolar;
pub mod export;
pub mod geometry;
pub mod ingest;
pub mod intrinsics;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod rotation;
pub mod synth;
pub mod tracks;
pub mod translation;

pub use geometry::{EssentialMatrix, Pose, Rotation, Rotation6D, TwoViewModel};
pub use ingest::{ImageRecord, MatchGraph, MatchPair};
pub use intrinsics::CameraIntrinsics;
pub use pipeline::{run_pipeline, PipelineConfig, SceneEstimate};
