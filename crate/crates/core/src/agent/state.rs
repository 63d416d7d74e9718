use crate::error::{Result, SimError};

pub const D_IMG: usize = 1024;
pub const D_TEXT: usize = 768;
pub const D_TAG: usize = 5;

/// Segment widths of the agent observation, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub img: usize,
    pub text: usize,
    pub tag: usize,
    pub mask: usize,
    pub latent: usize,
}

impl StateLayout {
    pub fn new(n_experts: usize, latent: usize) -> Self {
        Self {
            img: D_IMG,
            text: D_TEXT,
            tag: D_TAG,
            mask: n_experts,
            latent,
        }
    }

    pub fn dim(&self) -> usize {
        self.img + self.text + self.tag + self.mask + self.latent
    }

    /// Offset of the coarse-mask segment.
    pub fn mask_offset(&self) -> usize {
        self.img + self.text + self.tag
    }
}

/// `[f_img, f_text, r_tag, m_coarse, z_asem]`.
pub fn assemble_state(
    layout: &StateLayout,
    f_img: &[f64],
    f_text: &[f64],
    r_tag: &[f64],
    m_coarse: &[f64],
    z_asem: &[f64],
) -> Result<Vec<f64>> {
    let segments = [
        ("f_img", f_img, layout.img),
        ("f_text", f_text, layout.text),
        ("r_tag", r_tag, layout.tag),
        ("m_coarse", m_coarse, layout.mask),
        ("z_asem", z_asem, layout.latent),
    ];
    let mut s = Vec::with_capacity(layout.dim());
    for (name, seg, want) in segments {
        if seg.len() != want {
            return Err(SimError::Config(format!(
                "state segment {name} has length {} but {want} is required",
                seg.len()
            )));
        }
        s.extend_from_slice(seg);
    }
    Ok(s)
}
