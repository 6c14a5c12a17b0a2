//! Core algorithms for distributed multi-camera 3D human pose fusion.
//!
//! A set of smart edge sensors observe a scene, each extracting 2D joint
//! detections from per-joint confidence heatmaps. The detections are streamed
//! to a backend that associates persons across views, triangulates 3D joints
//! with confidence-weighted DLT, refines them through a skeleton factor graph,
//! and reprojects the predicted skeleton back into every camera as semantic
//! feedback that is fused into the next round of local detections.
//!
//! This crate holds everything that runs on either side of that loop and is
//! `no_std + alloc` so the sensor-side math can target embedded boards. IO,
//! transports, scenario configs and the CLI live in the companion
//! `edgepose-sim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod association;
pub mod backend;
pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod protocol;
pub mod scene;
pub mod sensor;
pub mod skeleton;
