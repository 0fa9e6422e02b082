//! Counter-based seed derivation so that parallel replicates are
//! reproducible and independent of how many of them are requested.

/// Named streams keep seeds for different purposes from colliding.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Folds,
    LearnerPi,
    LearnerG,
    Chain,
    Replicate,
    Scenario,
    Tree,
    CvFolds,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Folds => 0x01,
            Stream::LearnerPi => 0x02,
            Stream::LearnerG => 0x03,
            Stream::Chain => 0x04,
            Stream::Replicate => 0x05,
            Stream::Scenario => 0x06,
            Stream::Tree => 0x07,
            Stream::CvFolds => 0x08,
        }
    }
}

/// splitmix64 finalizer; statistically independent outputs for distinct inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a stream tag and a counter.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(master ^ stream.tag().wrapping_mul(0xa076_1d64_78bd_642f)).wrapping_add(index))
}
