#![allow(dead_code)]

pub mod audio;
pub mod images;
pub mod legality;
pub mod memory;
pub mod preliminary;
pub mod presets;
