//! Ground-truth simulation: analytic transient transport and detector noise.

pub mod dataset;
pub mod kv;
pub mod scene;
pub mod spad;
pub mod transport;

pub use dataset::{generate_dataset, CameraSet, Dataset, DatasetConfig, Manifest, Split, TimeOrigin};
pub use scene::{AnalyticScene, Light, LightKind, Pulse, Shape, Surface};
pub use spad::{measure, SpadModel};
pub use transport::{ideal_transient, ideal_transient_with, TimeBinning, TransportConfig};
