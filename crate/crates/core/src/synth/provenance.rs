use serde::{Deserialize, Serialize};

/// How a sample was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeryMode {
    /// Unmodified base image.
    None,
    CopyMove,
    InpaintRemoval,
}

impl ForgeryMode {
    pub fn name(self) -> &'static str {
        match self {
            ForgeryMode::None => "none",
            ForgeryMode::CopyMove => "copy_move",
            ForgeryMode::InpaintRemoval => "inpaint_removal",
        }
    }
}

/// Axis-aligned pixel rectangle; `top + height` and `left + width` are exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.bottom() <= height && self.right() <= width
    }

    /// True when at least `gap` pixels separate the two rectangles along
    /// some axis.
    pub fn separated_from(&self, other: &Rect, gap: usize) -> bool {
        self.right() + gap <= other.left
            || other.right() + gap <= self.left
            || self.bottom() + gap <= other.top
            || other.bottom() + gap <= self.top
    }
}

/// Where a forgery took its content from and where it landed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Copied rectangle (copy-move) or the removed object's bounding box.
    pub source: Rect,
    /// Bounding box of the pasted footprint; absent for object removal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paste: Option<Rect>,
    /// Index of the removed object in its base scene (object removal only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<usize>,
}

/// Post-processing applied to a copied patch, in this order:
/// scale, rotation, resize, Gaussian blur.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub resize: f64,
    pub blur_sigma: f64,
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        rotation_deg: 0.0,
        scale: 1.0,
        resize: 1.0,
        blur_sigma: 0.0,
    };
}

impl Default for TransformParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Everything needed to regenerate a sample from its configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: ForgeryMode,
    /// Item seed. The base scene comes from `mix(seed, 0)`; see
    /// [`crate::synth::synthesize_dataset`].
    pub seed: u64,
    pub region: Option<RegionSpec>,
    pub transform: Option<TransformParams>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation() {
        let a = Rect { top: 0, left: 0, height: 4, width: 4 };
        let b = Rect { top: 0, left: 8, height: 4, width: 4 };
        assert!(a.separated_from(&b, 4));
        assert!(!a.separated_from(&b, 5));
        let c = Rect { top: 2, left: 2, height: 4, width: 4 };
        assert!(!a.separated_from(&c, 0));
    }
}
