use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite or out-of-range value at pixel (row {row}, col {col}), class {class}")]
    InvalidValue { row: usize, col: usize, class: usize },

    #[error("probabilities at pixel (row {row}, col {col}) sum to {sum}, expected 1")]
    RowSum { row: usize, col: usize, sum: f32 },

    #[error("label {label} at pixel (row {row}, col {col}) is not a valid class (num_classes = {num_classes})")]
    LabelOutOfRange { row: usize, col: usize, label: u8, num_classes: usize },

    #[error("ignore label present at pixel (row {row}, col {col}); mask ignore pixels before expanding labels")]
    IgnorePresent { row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("non-finite value during mean-field inference at pixel {pixel}; reduce the pairwise weights")]
    NonFinite { pixel: usize },

    #[error("no class has a non-empty union; nothing to evaluate")]
    EmptyEvaluation,
}
