//! Core library for simulated robot-assisted instrument placement: rigid-body
//! frame chains, subject-image registration, HMD calibration, target planning,
//! operator collision modelling, a 7-DOF arm, joint-space planning and
//! simulated devices.

pub mod arm;
pub mod calibration;
pub mod collision;
pub mod devices;
pub mod geometry;
pub mod human;
pub mod mesh;
pub mod planning;
pub mod registration;
pub mod targeting;
