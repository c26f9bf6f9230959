//! Complete descriptions of every builtin block-scaled scheme.

use std::fmt;
use std::sync::OnceLock;

use super::codebook::Codebook;
use super::scale::{ScaleType, SignBitRole};
use crate::error::{Error, Result};

/// How a block chooses between candidate encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// One element codebook, one candidate.
    Single,
    /// Float and integer candidates, flagged through the scale sign bit.
    IntFloat,
    /// Float codebook scaled to a maximum of 6 or 4, whichever errs less.
    FourSix,
}

macro_rules! format_ids {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Stable identifier of a builtin format. The discriminant is the
        /// on-disk format id.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u16)]
        pub enum FormatId {
            $($variant),+
        }

        impl FormatId {
            pub const ALL: &'static [FormatId] = &[$(FormatId::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(FormatId::$variant => $name),+
                }
            }
        }
    };
}

format_ids! {
    Mxfp3 => "MXFP3",
    Nvint3 => "NVINT3",
    Nvfp3 => "NVFP3",
    If3 => "IF3",
    Nvint3Bs8 => "NVINT3-BS8",
    Nvfp3Bs8 => "NVFP3-BS8",
    If3Bs8 => "IF3-BS8",
    Mxfp4 => "MXFP4",
    Nvint4 => "NVINT4",
    Nvfp4 => "NVFP4",
    Nvfp4FourSix => "NVFP4-46",
    If4 => "IF4",
    Nvint4Bs8 => "NVINT4-BS8",
    Nvfp4Bs8 => "NVFP4-BS8",
    Nvfp4Bs8FourSix => "NVFP4-BS8-46",
    If4Bs8 => "IF4-BS8",
    Mxfp6E2m3 => "MXFP6-E2M3",
    Mxfp6E3m2 => "MXFP6-E3M2",
    Nvint6 => "NVINT6",
    Nvfp6E2m3 => "NVFP6-E2M3",
    Nvfp6E3m2 => "NVFP6-E3M2",
    If6E2m3 => "IF6-E2M3",
    If6E3m2 => "IF6-E3M2",
}

impl FormatId {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::UnknownFormatId(code))
    }

    /// Case-insensitive lookup; also accepts `+4/6` / ` (4/6)` spellings of
    /// the four-over-six variants.
    pub fn from_name(name: &str) -> Result<Self> {
        let norm = name
            .trim()
            .to_ascii_uppercase()
            .replace(" (4/6)", "-46")
            .replace(" + 4/6", "-46")
            .replace("+4/6", "-46")
            .replace('_', "-");
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.name() == norm)
            .ok_or_else(|| Error::UnknownFormat {
                name: name.to_string(),
                valid: Self::ALL
                    .iter()
                    .map(|id| id.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    /// The shared, lazily built spec for this id.
    pub fn spec(self) -> &'static FormatSpec {
        static SPECS: OnceLock<Vec<FormatSpec>> = OnceLock::new();
        &SPECS.get_or_init(|| FormatId::ALL.iter().map(|&id| FormatSpec::build(id)).collect())
            [self as usize]
    }
}

impl fmt::Display for FormatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to quantize and dequantize under one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatSpec {
    pub id: FormatId,
    pub block_size: usize,
    pub scale_type: ScaleType,
    pub float_codebook: Option<Codebook>,
    pub int_codebook: Option<Codebook>,
    pub selection: Selection,
    /// `fp_max / int_max` for adaptive formats, 1 otherwise.
    pub align_descale: f64,
    /// Element maximum the block absmax is mapped onto.
    pub fp_max: f64,
    /// Largest encodable block scale.
    pub scale_max: f64,
    /// Block-scale ceiling used when deriving the tensor scale. Equal to
    /// `scale_max` except for four-over-six, which reserves headroom for
    /// the ×1.5 rescale.
    pub tensor_scale_ceiling: f64,
}

/// Block-scale multiplier used by the max-4 candidate of four-over-six.
pub const FOUR_SIX_RESCALE: f64 = 1.5;
/// Tensor-scale ceiling of four-over-six (`6 × 256` overall maximum).
pub const FOUR_SIX_CEILING: f64 = 256.0;

impl FormatSpec {
    fn build(id: FormatId) -> Self {
        use FormatId::*;
        let (bs, scale, float, int, selection) = match id {
            Mxfp3 => (32, ScaleType::UE8M0, Some(Codebook::e2m0()), None, Selection::Single),
            Nvint3 => (16, ScaleType::E4M3, None, Some(Codebook::int3()), Selection::Single),
            Nvfp3 => (16, ScaleType::E4M3, Some(Codebook::e2m0()), None, Selection::Single),
            If3 => (16, ScaleType::UE4M3, Some(Codebook::e2m0()), Some(Codebook::int3()), Selection::IntFloat),
            Nvint3Bs8 => (8, ScaleType::E4M3, None, Some(Codebook::int3()), Selection::Single),
            Nvfp3Bs8 => (8, ScaleType::E4M3, Some(Codebook::e2m0()), None, Selection::Single),
            If3Bs8 => (8, ScaleType::UE4M3, Some(Codebook::e2m0()), Some(Codebook::int3()), Selection::IntFloat),
            Mxfp4 => (32, ScaleType::UE8M0, Some(Codebook::e2m1()), None, Selection::Single),
            Nvint4 => (16, ScaleType::E4M3, None, Some(Codebook::int4()), Selection::Single),
            Nvfp4 => (16, ScaleType::E4M3, Some(Codebook::e2m1()), None, Selection::Single),
            Nvfp4FourSix => (16, ScaleType::E4M3, Some(Codebook::e2m1()), None, Selection::FourSix),
            If4 => (16, ScaleType::UE4M3, Some(Codebook::e2m1()), Some(Codebook::int4()), Selection::IntFloat),
            Nvint4Bs8 => (8, ScaleType::E4M3, None, Some(Codebook::int4()), Selection::Single),
            Nvfp4Bs8 => (8, ScaleType::E4M3, Some(Codebook::e2m1()), None, Selection::Single),
            Nvfp4Bs8FourSix => (8, ScaleType::E4M3, Some(Codebook::e2m1()), None, Selection::FourSix),
            If4Bs8 => (8, ScaleType::UE4M3, Some(Codebook::e2m1()), Some(Codebook::int4()), Selection::IntFloat),
            Mxfp6E2m3 => (32, ScaleType::UE8M0, Some(Codebook::e2m3()), None, Selection::Single),
            Mxfp6E3m2 => (32, ScaleType::UE8M0, Some(Codebook::e3m2()), None, Selection::Single),
            Nvint6 => (16, ScaleType::E4M3, None, Some(Codebook::int6()), Selection::Single),
            Nvfp6E2m3 => (16, ScaleType::E4M3, Some(Codebook::e2m3()), None, Selection::Single),
            Nvfp6E3m2 => (16, ScaleType::E4M3, Some(Codebook::e3m2()), None, Selection::Single),
            If6E2m3 => (16, ScaleType::UE4M3, Some(Codebook::e2m3()), Some(Codebook::int6()), Selection::IntFloat),
            If6E3m2 => (16, ScaleType::UE4M3, Some(Codebook::e3m2()), Some(Codebook::int6()), Selection::IntFloat),
        };
        let fp_max = float.as_ref().or(int.as_ref()).map(Codebook::max).unwrap();
        let align_descale = match (&float, &int) {
            (Some(f), Some(i)) => f.max() / i.max(),
            _ => 1.0,
        };
        let scale_max = scale.max_value();
        let tensor_scale_ceiling = if selection == Selection::FourSix {
            FOUR_SIX_CEILING
        } else {
            scale_max
        };
        Self {
            id,
            block_size: bs,
            scale_type: scale,
            float_codebook: float,
            int_codebook: int,
            selection,
            align_descale,
            fp_max,
            scale_max,
            tensor_scale_ceiling,
        }
    }

    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    pub fn is_adaptive(&self) -> bool {
        self.selection == Selection::IntFloat
    }

    pub fn is_four_six(&self) -> bool {
        self.selection == Selection::FourSix
    }

    /// MX-style formats: power-of-two block scales and no tensor scale.
    pub fn is_mx(&self) -> bool {
        self.scale_type.is_power_of_two()
    }

    /// Codebook used by the default (non-indicator) candidate.
    pub fn primary_codebook(&self) -> &Codebook {
        self.float_codebook
            .as_ref()
            .or(self.int_codebook.as_ref())
            .expect("every format has an element codebook")
    }

    /// Codebook for blocks whose indicator bit is set.
    pub fn indicator_codebook(&self) -> Option<&Codebook> {
        if self.is_adaptive() {
            self.int_codebook.as_ref()
        } else {
            None
        }
    }

    /// Element code width in bits.
    pub fn element_bits(&self) -> u32 {
        self.primary_codebook().bits()
    }

    /// Checks the structural invariants of a spec.
    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32].contains(&self.block_size) {
            return Err(Error::InvalidArgument(format!(
                "{}: block size {}",
                self.name(),
                self.block_size
            )));
        }
        if self.is_adaptive() {
            let (f, i) = match (&self.float_codebook, &self.int_codebook) {
                (Some(f), Some(i)) => (f, i),
                _ => return Err(Error::InvalidArgument(format!("{}: adaptive without both codebooks", self.name()))),
            };
            if self.scale_type.sign_bit_role() != SignBitRole::FormatIndicator {
                return Err(Error::InvalidArgument(format!("{}: adaptive needs an indicator bit", self.name())));
            }
            if f.bits() != i.bits() || self.align_descale != f.max() / i.max() {
                return Err(Error::InvalidArgument(format!("{}: inconsistent codebooks", self.name())));
            }
        }
        Ok(())
    }
}

/// Looks up a builtin format by name.
pub fn builtin_format(name: &str) -> Result<FormatSpec> {
    Ok(FormatId::from_name(name)?.spec().clone())
}
