use super::ring::RnsPoly;

/// Encoded slot vector at a given level and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub poly: RnsPoly,
    pub level: usize,
    pub scale: f64,
}

/// `parts[0] + parts[1]*s (+ parts[2]*s^2)` decrypts to the scaled message.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub parts: Vec<RnsPoly>,
    pub level: usize,
    pub scale: f64,
}

impl Ciphertext {
    pub fn is_relinearized(&self) -> bool {
        self.parts.len() == 2
    }
}
