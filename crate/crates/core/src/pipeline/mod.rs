//! Content-aware training: chunking, LR generation, patch sampling and the
//! optimizer loop.

mod adam;
mod sampler;
mod train;
mod video;

pub use adam::{Adam, AdamConfig};
pub use sampler::{
    aligned_positions, Draw, LossSampler, Sampler, SamplerKind, UniformSampler, CELL_SIZE, EMA_DECAY,
    FLOOR_FRACTION, UNSEEN_WEIGHT,
};
pub use train::{
    evaluate, initial_state, restore_frame, train, train_baseline_per_chunk, train_from_scratch, Checkpoint,
    EpochLog, EvalStats, SuperResolve, TrainConfig, TrainOutcome,
};
pub use video::{chunk_bounds, chunk_video, crop_to_multiple, make_lr, ChunkedVideo, PatchPair};
