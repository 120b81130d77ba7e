//! Volumetric remote assistance without the hardware.
//!
//! An operator's RGB-D camera (synthetic or replayed from a recording) is
//! compressed with a tile-delta depth codec, streamed to a remote expert over
//! a deterministic simulated network, reconstructed into point clouds or
//! meshes, and annotated from both ends with anchored 3-D strokes.
//!
//! | module | contents |
//! |---|---|
//! | [`frame`] | frame types, synthetic scenes, VRS1 record/replay |
//! | [`depth_codec`] | keyframe + changed-tile delta compression |
//! | [`color_codec`] | pluggable color codecs (raw, deflate) |
//! | [`geometry`] | deprojection, point clouds, meshes, ray casts |
//! | [`annotation`] | convergent stroke state and pointer gestures |
//! | [`wire`] | binary protocol, media queue, network simulator |
//! | [`session`] | handshake, operator/expert pipelines, simulation |
//! | [`config`] | text forms of scenes, profiles and config files |
//! | [`gateway`] | WebSocket bridge for the browser expert console |

pub mod annotation;
pub mod color_codec;
pub mod config;
pub mod depth_codec;
pub mod frame;
pub mod gateway;
pub mod geometry;
pub mod session;
pub mod wire;
