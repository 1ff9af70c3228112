use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MheError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("slot vector of length {len} exceeds {slots} slots")]
    TooManySlots { len: usize, slots: usize },
    #[error("encoded value overflows the coefficient modulus at level {level}")]
    ScaleOverflow { level: usize },
    #[error("level exhausted: operation needs level >= {needed}, ciphertext is at {level}")]
    LevelExhausted { needed: usize, level: usize },
    #[error("scales {0} and {1} cannot be aligned without a spare level")]
    ScaleMismatch(f64, f64),
    #[error("ciphertexts belong to different rings")]
    RingMismatch,
    #[error("missing rotation key for offset {0}")]
    MissingRotationKey(usize),
    #[error("missing relinearization key")]
    MissingRelinKey,
    #[error("operand is not relinearized")]
    NotRelinearized,
    #[error("expected {expected} secret shares, got {got}")]
    ShareCount { expected: usize, got: usize },
    #[error(
        "bootstrap constraint violated at level {level}: log2 Q = {log_q:.2} <= log2((N+1) 2^delta 2^lambda) = {log_bound:.2}"
    )]
    BootstrapConstraint { level: usize, log_q: f64, log_bound: f64 },
    #[error("ciphertext is encrypted under a different key")]
    WrongKey,
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, MheError>;
