pub mod mesh;
pub mod primitives;
pub mod spatial;
pub mod jacobian;
pub mod image_buf;
pub mod render;
pub mod embed;
pub mod losses;
pub mod optim;
pub mod body;
pub mod texture;
pub mod metrics;
