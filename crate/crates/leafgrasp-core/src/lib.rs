//! Desk-scale leaf-grasping stack.
//!
//! The crate simulates the full perception-to-grasp loop for foliage at a
//! workbench scale: a synthetic RGB-D renderer with ground truth stands in
//! for the camera and the segmenter, the perception pipeline turns masked
//! depth into ranked five-candidate 6D grasp poses per leaf, and the
//! manipulation workflow drives a DH-parameterized 6-DOF arm through IK,
//! RRT-Connect planning, simulated execution, grasp verification, and
//! spectral acquisition, aggregating everything into leaves-per-batch (LPB)
//! metrics.
//!
//! Module map:
//! - [`geometry`]: vectors, unit quaternions, rigid transforms, camera model
//! - [`perception`]: masked depth -> point cloud -> filtered cloud -> 6D pose sets
//! - [`scenegen`]: synthetic leaves, batch layout, RGB-D rendering with noise
//! - [`kinematics`]: DH forward kinematics, geometric Jacobian, DLS inverse kinematics
//! - [`planning`]: capsule/box collision scene and joint-space RRT-Connect
//! - [`workflow`]: per-batch grasp loop, spectral simulation, LPB metrics
//! - [`io`]: the on-disk formats (depth, PBM masks, JSON, CSV, PLY)
//! - [`manifest`]: reproducible multi-scene run descriptions and execution

pub mod geometry;
pub mod io;
pub mod kinematics;
pub mod manifest;
pub mod perception;
pub mod planning;
pub mod scenegen;
pub mod workflow;

/// Mixes a master seed with a stream of indices into an independent
/// sub-seed. Every random decision in the crate draws from a seed derived
/// this way, so a single manifest seed pins the entire run.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    // SplitMix64 over the concatenated words.
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    for &word in stream {
        state = state.wrapping_add(word).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}
