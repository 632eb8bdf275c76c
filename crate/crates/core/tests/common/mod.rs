#![allow(dead_code)]

pub mod convolution;
