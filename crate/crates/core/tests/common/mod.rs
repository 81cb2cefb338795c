#![allow(dead_code)]

pub mod enet;
pub mod fusion;
pub mod gradcheck;
pub mod saliency;
pub mod sift;
pub mod svm;
