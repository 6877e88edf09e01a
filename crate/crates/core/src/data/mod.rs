//! Depth crops, joint targets, synthetic hands and the FTDS container.

mod crop;
mod ftds;
mod joints;
mod synth;

pub use crop::{
    crop_and_normalize, crop_and_normalize_to, Camera, CropWindow, DepthFrame, CROP_SIZE,
};
pub use ftds::{
    open_dataset, read_dataset, write_dataset, DatasetReader, DatasetWriter, Header, Sample,
};
pub use joints::{
    denormalize_joints, normalize_joints, CropMeta, JointSet, NormalizedJoints, DEFAULT_CUBE_MM,
    JOINT_NAMES, NUM_FINGERTIPS, PALM,
};
pub use synth::{
    sample_from_hand, synth_generate, synth_hands, SynthConfig, SynthGenerator, SynthHand,
};
