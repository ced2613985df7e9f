//! Ranged, hierarchy-aware coordinates for every addressable entity on the chip.
//!
//! Geometry: two hemispheres, each holding a 256 x 256 synapse matrix and 256
//! neurons. A hemisphere is split column-wise into two quadrants of
//! 256 rows x 128 columns. Grid coordinates enumerate row-major.

use std::fmt;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordError {
    #[error("{kind}({value}) out of range [{min}, {max}]")]
    OutOfRange {
        kind: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("cannot project {from} onto {to}")]
    InvalidProjection { from: CoordKind, to: CoordKind },
    #[error("cannot combine {child} with {parent}")]
    InvalidCombination { child: CoordKind, parent: CoordKind },
    #[error("no conversion from {from} to {to}")]
    NoConversion { from: CoordKind, to: CoordKind },
}

/// A coordinate kind with a fixed, contiguous enumeration `[0, SIZE)`.
pub trait Coordinate: Copy + Eq + Ord + Hash + fmt::Debug + fmt::Display + Sized {
    const KIND: CoordKind;
    const SIZE: usize;

    fn to_enum(self) -> usize;

    fn from_enum(index: usize) -> Result<Self, CoordError>;

    /// Every value of the kind in ascending enumeration order.
    fn iter_all() -> IterAll<Self> {
        IterAll {
            next: 0,
            _kind: std::marker::PhantomData,
        }
    }
}

pub struct IterAll<C> {
    next: usize,
    _kind: std::marker::PhantomData<C>,
}

impl<C: Coordinate> Iterator for IterAll<C> {
    type Item = C;

    fn next(&mut self) -> Option<C> {
        if self.next >= C::SIZE {
            return None;
        }
        let c = C::from_enum(self.next).expect("index below SIZE");
        self.next += 1;
        Some(c)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = C::SIZE - self.next;
        (rest, Some(rest))
    }
}

impl<C: Coordinate> ExactSizeIterator for IterAll<C> {}

/// Shorthand for `C::iter_all()`.
pub fn iter_all<C: Coordinate>() -> IterAll<C> {
    C::iter_all()
}

fn out_of_range(kind: CoordKind, value: i64, size: usize) -> CoordError {
    CoordError::OutOfRange {
        kind: kind.name(),
        value,
        min: 0,
        max: size as i64 - 1,
    }
}

macro_rules! linear_coordinate {
    ($(#[$meta:meta])* $name:ident, $size:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(u32);

        impl $name {
            pub const SIZE: usize = $size;
            pub const MIN: usize = 0;
            pub const MAX: usize = $size - 1;

            pub fn new(value: usize) -> Result<Self, CoordError> {
                if value < Self::SIZE {
                    Ok(Self(value as u32))
                } else {
                    Err(out_of_range(CoordKind::$name, value as i64, Self::SIZE))
                }
            }

            pub fn value(self) -> usize {
                self.0 as usize
            }
        }

        impl Coordinate for $name {
            const KIND: CoordKind = CoordKind::$name;
            const SIZE: usize = $size;

            fn to_enum(self) -> usize {
                self.0 as usize
            }

            fn from_enum(index: usize) -> Result<Self, CoordError> {
                Self::new(index)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl TryFrom<usize> for $name {
            type Error = CoordError;

            fn try_from(value: usize) -> Result<Self, CoordError> {
                Self::new(value)
            }
        }
    };
}

linear_coordinate!(HemisphereOnChip, 2);
linear_coordinate!(QuadrantOnHemisphere, 2);
linear_coordinate!(
    /// `hemisphere * 2 + quadrant_on_hemisphere`.
    QuadrantOnChip,
    4
);
linear_coordinate!(NeuronOnHemisphere, 256);
linear_coordinate!(
    /// `hemisphere * 256 + neuron_on_hemisphere`.
    NeuronOnChip,
    512
);
linear_coordinate!(SynapseRowOnQuadrant, 256);
linear_coordinate!(SynapseColumnOnQuadrant, 128);
linear_coordinate!(SynapseRowOnHemisphere, 256);
linear_coordinate!(SynapseColumnOnHemisphere, 256);
linear_coordinate!(
    /// Synapse row across both hemispheres: `hemisphere * 256 + row`.
    SynapseRowOnChip,
    512
);
linear_coordinate!(NeuronConfigOnDLS, 512);
linear_coordinate!(SpikeCounterOnDLS, 512);
linear_coordinate!(
    /// Synapse driver feeding one synapse row; same enumeration as [`SynapseRowOnChip`].
    SynapseDriverOnDLS,
    512
);
linear_coordinate!(
    /// Per-neuron on-chip event routing slot.
    NeuronEventOutputOnDLS,
    512
);
linear_coordinate!(
    #[derive(Default)]
    TimerOnDLS,
    1
);
linear_coordinate!(
    /// The single spike injection register.
    #[derive(Default)]
    SpikePackToChipOnDLS,
    1
);
linear_coordinate!(PPUOnDLS, 2);
linear_coordinate!(PPUControlOnDLS, 2);
linear_coordinate!(
    /// 32-bit word inside one PPU's 16 KiB SRAM.
    PPUMemoryWordOnPPU,
    4096
);

// ---------------------------------------------------------------------------
// Grid kinds

/// Synapse inside one quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynapseOnQuadrant {
    pub row: SynapseRowOnQuadrant,
    pub column: SynapseColumnOnQuadrant,
}

impl SynapseOnQuadrant {
    pub fn new(row: SynapseRowOnQuadrant, column: SynapseColumnOnQuadrant) -> Self {
        Self { row, column }
    }

    pub fn from_row_col(row: usize, column: usize) -> Result<Self, CoordError> {
        Ok(Self::new(
            SynapseRowOnQuadrant::new(row)?,
            SynapseColumnOnQuadrant::new(column)?,
        ))
    }
}

impl Coordinate for SynapseOnQuadrant {
    const KIND: CoordKind = CoordKind::SynapseOnQuadrant;
    const SIZE: usize = SynapseRowOnQuadrant::SIZE * SynapseColumnOnQuadrant::SIZE;

    fn to_enum(self) -> usize {
        self.row.value() * SynapseColumnOnQuadrant::SIZE + self.column.value()
    }

    fn from_enum(index: usize) -> Result<Self, CoordError> {
        if index >= Self::SIZE {
            return Err(out_of_range(Self::KIND, index as i64, Self::SIZE));
        }
        Self::from_row_col(
            index / SynapseColumnOnQuadrant::SIZE,
            index % SynapseColumnOnQuadrant::SIZE,
        )
    }
}

impl fmt::Display for SynapseOnQuadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SynapseOnQuadrant({}, {})", self.row.0, self.column.0)
    }
}

/// Synapse inside one hemisphere's 256 x 256 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynapseOnHemisphere {
    pub row: SynapseRowOnHemisphere,
    pub column: SynapseColumnOnHemisphere,
}

impl SynapseOnHemisphere {
    pub fn new(row: SynapseRowOnHemisphere, column: SynapseColumnOnHemisphere) -> Self {
        Self { row, column }
    }

    pub fn from_row_col(row: usize, column: usize) -> Result<Self, CoordError> {
        Ok(Self::new(
            SynapseRowOnHemisphere::new(row)?,
            SynapseColumnOnHemisphere::new(column)?,
        ))
    }

    /// Combine a quadrant-local synapse with its quadrant.
    pub fn from_quadrant(synapse: SynapseOnQuadrant, quadrant: QuadrantOnHemisphere) -> Self {
        Self {
            row: SynapseRowOnHemisphere(synapse.row.0),
            column: SynapseColumnOnHemisphere(quadrant.0 * SynapseColumnOnQuadrant::SIZE as u32 + synapse.column.0),
        }
    }

    pub fn to_synapse_on_quadrant(self) -> SynapseOnQuadrant {
        SynapseOnQuadrant {
            row: SynapseRowOnQuadrant(self.row.0),
            column: SynapseColumnOnQuadrant(self.column.0 % SynapseColumnOnQuadrant::SIZE as u32),
        }
    }

    pub fn to_quadrant_on_hemisphere(self) -> QuadrantOnHemisphere {
        QuadrantOnHemisphere(self.column.0 / SynapseColumnOnQuadrant::SIZE as u32)
    }

    pub fn to_neuron_on_hemisphere(self) -> NeuronOnHemisphere {
        NeuronOnHemisphere(self.column.0)
    }
}

impl Coordinate for SynapseOnHemisphere {
    const KIND: CoordKind = CoordKind::SynapseOnHemisphere;
    const SIZE: usize = SynapseRowOnHemisphere::SIZE * SynapseColumnOnHemisphere::SIZE;

    fn to_enum(self) -> usize {
        self.row.value() * SynapseColumnOnHemisphere::SIZE + self.column.value()
    }

    fn from_enum(index: usize) -> Result<Self, CoordError> {
        if index >= Self::SIZE {
            return Err(out_of_range(Self::KIND, index as i64, Self::SIZE));
        }
        Self::from_row_col(
            index / SynapseColumnOnHemisphere::SIZE,
            index % SynapseColumnOnHemisphere::SIZE,
        )
    }
}

impl fmt::Display for SynapseOnHemisphere {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SynapseOnHemisphere({}, {})", self.row.0, self.column.0)
    }
}

/// One of the 131 072 synapses on the chip; hemisphere-major, then row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynapseOnChip {
    pub hemisphere: HemisphereOnChip,
    pub synapse: SynapseOnHemisphere,
}

impl SynapseOnChip {
    pub fn new(synapse: SynapseOnHemisphere, hemisphere: HemisphereOnChip) -> Self {
        Self { hemisphere, synapse }
    }

    pub fn from_parts(hemisphere: usize, row: usize, column: usize) -> Result<Self, CoordError> {
        Ok(Self::new(
            SynapseOnHemisphere::from_row_col(row, column)?,
            HemisphereOnChip::new(hemisphere)?,
        ))
    }

    pub fn from_quadrant(synapse: SynapseOnQuadrant, quadrant: QuadrantOnChip) -> Self {
        Self::new(
            SynapseOnHemisphere::from_quadrant(synapse, quadrant.to_quadrant_on_hemisphere()),
            quadrant.to_hemisphere_on_chip(),
        )
    }

    pub fn to_synapse_on_hemisphere(self) -> SynapseOnHemisphere {
        self.synapse
    }

    pub fn to_hemisphere_on_chip(self) -> HemisphereOnChip {
        self.hemisphere
    }

    pub fn to_synapse_on_quadrant(self) -> SynapseOnQuadrant {
        self.synapse.to_synapse_on_quadrant()
    }

    pub fn to_quadrant_on_chip(self) -> QuadrantOnChip {
        QuadrantOnChip::from_parts(self.synapse.to_quadrant_on_hemisphere(), self.hemisphere)
    }

    /// Column `c` of hemisphere `h` feeds neuron `h * 256 + c`.
    pub fn to_neuron_on_chip(self) -> NeuronOnChip {
        NeuronOnChip::from_parts(self.synapse.to_neuron_on_hemisphere(), self.hemisphere)
    }

    pub fn to_synapse_row_on_chip(self) -> SynapseRowOnChip {
        SynapseRowOnChip(self.hemisphere.0 * SynapseRowOnHemisphere::SIZE as u32 + self.synapse.row.0)
    }

    pub fn to_synapse_driver_on_dls(self) -> SynapseDriverOnDLS {
        SynapseDriverOnDLS(self.to_synapse_row_on_chip().0)
    }

    pub fn row(self) -> usize {
        self.synapse.row.value()
    }

    pub fn column(self) -> usize {
        self.synapse.column.value()
    }
}

impl Coordinate for SynapseOnChip {
    const KIND: CoordKind = CoordKind::SynapseOnChip;
    const SIZE: usize = HemisphereOnChip::SIZE * SynapseOnHemisphere::SIZE;

    fn to_enum(self) -> usize {
        self.hemisphere.value() * SynapseOnHemisphere::SIZE + self.synapse.to_enum()
    }

    fn from_enum(index: usize) -> Result<Self, CoordError> {
        if index >= Self::SIZE {
            return Err(out_of_range(Self::KIND, index as i64, Self::SIZE));
        }
        Ok(Self::new(
            SynapseOnHemisphere::from_enum(index % SynapseOnHemisphere::SIZE)?,
            HemisphereOnChip::new(index / SynapseOnHemisphere::SIZE)?,
        ))
    }
}

impl fmt::Display for SynapseOnChip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SynapseOnChip({}, {}, {})",
            self.hemisphere.0, self.synapse.row.0, self.synapse.column.0
        )
    }
}

/// Correlation sensor of one synapse; shares the synapse grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CorrelationOnChip(pub SynapseOnChip);

impl Coordinate for CorrelationOnChip {
    const KIND: CoordKind = CoordKind::CorrelationOnChip;
    const SIZE: usize = SynapseOnChip::SIZE;

    fn to_enum(self) -> usize {
        self.0.to_enum()
    }

    fn from_enum(index: usize) -> Result<Self, CoordError> {
        SynapseOnChip::from_enum(index)
            .map(CorrelationOnChip)
            .map_err(|_| out_of_range(Self::KIND, index as i64, Self::SIZE))
    }
}

impl fmt::Display for CorrelationOnChip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0;
        write!(
            f,
            "CorrelationOnChip({}, {}, {})",
            s.hemisphere.0, s.synapse.row.0, s.synapse.column.0
        )
    }
}

/// SRAM word of a specific PPU: `ppu * 4096 + word`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PPUMemoryWordOnDLS {
    pub ppu: PPUOnDLS,
    pub word: PPUMemoryWordOnPPU,
}

impl PPUMemoryWordOnDLS {
    pub fn new(word: PPUMemoryWordOnPPU, ppu: PPUOnDLS) -> Self {
        Self { ppu, word }
    }

    pub fn from_parts(ppu: usize, word: usize) -> Result<Self, CoordError> {
        Ok(Self::new(PPUMemoryWordOnPPU::new(word)?, PPUOnDLS::new(ppu)?))
    }
}

impl Coordinate for PPUMemoryWordOnDLS {
    const KIND: CoordKind = CoordKind::PPUMemoryWordOnDLS;
    const SIZE: usize = PPUOnDLS::SIZE * PPUMemoryWordOnPPU::SIZE;

    fn to_enum(self) -> usize {
        self.ppu.value() * PPUMemoryWordOnPPU::SIZE + self.word.value()
    }

    fn from_enum(index: usize) -> Result<Self, CoordError> {
        if index >= Self::SIZE {
            return Err(out_of_range(Self::KIND, index as i64, Self::SIZE));
        }
        Self::from_parts(index / PPUMemoryWordOnPPU::SIZE, index % PPUMemoryWordOnPPU::SIZE)
    }
}

impl fmt::Display for PPUMemoryWordOnDLS {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PPUMemoryWordOnDLS({}, {})", self.ppu.0, self.word.0)
    }
}

/// Contiguous span of SRAM words inside one PPU. Not an enumerable kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PPUMemoryBlockOnDLS {
    pub ppu: PPUOnDLS,
    start: PPUMemoryWordOnPPU,
    len: u32,
}

impl PPUMemoryBlockOnDLS {
    pub fn new(ppu: PPUOnDLS, start: PPUMemoryWordOnPPU, len: usize) -> Result<Self, CoordError> {
        if start.value() + len > PPUMemoryWordOnPPU::SIZE {
            return Err(CoordError::OutOfRange {
                kind: "PPUMemoryBlockOnDLS",
                value: (start.value() + len) as i64,
                min: 0,
                max: PPUMemoryWordOnPPU::SIZE as i64,
            });
        }
        Ok(Self {
            ppu,
            start,
            len: len as u32,
        })
    }

    pub fn start(self) -> PPUMemoryWordOnPPU {
        self.start
    }

    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn words(self) -> impl Iterator<Item = PPUMemoryWordOnDLS> {
        let ppu = self.ppu;
        (self.start.0..self.start.0 + self.len).map(move |w| PPUMemoryWordOnDLS::new(PPUMemoryWordOnPPU(w), ppu))
    }
}

impl fmt::Display for PPUMemoryBlockOnDLS {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PPUMemoryBlockOnDLS({}, {}, {})", self.ppu.0, self.start.0, self.len)
    }
}

// ---------------------------------------------------------------------------
// Linear hierarchy conversions

impl QuadrantOnChip {
    pub fn from_parts(quadrant: QuadrantOnHemisphere, hemisphere: HemisphereOnChip) -> Self {
        QuadrantOnChip(hemisphere.0 * 2 + quadrant.0)
    }

    pub fn to_hemisphere_on_chip(self) -> HemisphereOnChip {
        HemisphereOnChip(self.0 / 2)
    }

    pub fn to_quadrant_on_hemisphere(self) -> QuadrantOnHemisphere {
        QuadrantOnHemisphere(self.0 % 2)
    }
}

impl NeuronOnChip {
    pub fn from_parts(neuron: NeuronOnHemisphere, hemisphere: HemisphereOnChip) -> Self {
        NeuronOnChip(hemisphere.0 * NeuronOnHemisphere::SIZE as u32 + neuron.0)
    }

    pub fn to_hemisphere_on_chip(self) -> HemisphereOnChip {
        HemisphereOnChip(self.0 / NeuronOnHemisphere::SIZE as u32)
    }

    pub fn to_neuron_on_hemisphere(self) -> NeuronOnHemisphere {
        NeuronOnHemisphere(self.0 % NeuronOnHemisphere::SIZE as u32)
    }

    pub fn to_neuron_config_on_dls(self) -> NeuronConfigOnDLS {
        NeuronConfigOnDLS(self.0)
    }

    pub fn to_spike_counter_on_dls(self) -> SpikeCounterOnDLS {
        SpikeCounterOnDLS(self.0)
    }

    pub fn to_neuron_event_output_on_dls(self) -> NeuronEventOutputOnDLS {
        NeuronEventOutputOnDLS(self.0)
    }
}

impl NeuronConfigOnDLS {
    pub fn to_neuron_on_chip(self) -> NeuronOnChip {
        NeuronOnChip(self.0)
    }
}

impl SpikeCounterOnDLS {
    pub fn to_neuron_on_chip(self) -> NeuronOnChip {
        NeuronOnChip(self.0)
    }
}

impl SynapseRowOnChip {
    pub fn from_parts(row: SynapseRowOnHemisphere, hemisphere: HemisphereOnChip) -> Self {
        SynapseRowOnChip(hemisphere.0 * SynapseRowOnHemisphere::SIZE as u32 + row.0)
    }

    pub fn to_hemisphere_on_chip(self) -> HemisphereOnChip {
        HemisphereOnChip(self.0 / SynapseRowOnHemisphere::SIZE as u32)
    }

    pub fn to_synapse_row_on_hemisphere(self) -> SynapseRowOnHemisphere {
        SynapseRowOnHemisphere(self.0 % SynapseRowOnHemisphere::SIZE as u32)
    }

    pub fn to_synapse_driver_on_dls(self) -> SynapseDriverOnDLS {
        SynapseDriverOnDLS(self.0)
    }
}

impl SynapseDriverOnDLS {
    pub fn to_synapse_row_on_chip(self) -> SynapseRowOnChip {
        SynapseRowOnChip(self.0)
    }
}

impl PPUOnDLS {
    /// PPU `i` sits next to hemisphere `i`.
    pub fn to_hemisphere_on_chip(self) -> HemisphereOnChip {
        HemisphereOnChip(self.0)
    }

    pub fn to_ppu_control_on_dls(self) -> PPUControlOnDLS {
        PPUControlOnDLS(self.0)
    }
}

impl PPUControlOnDLS {
    pub fn to_ppu_on_dls(self) -> PPUOnDLS {
        PPUOnDLS(self.0)
    }
}

// ---------------------------------------------------------------------------
// Dynamic (kind-erased) coordinates

macro_rules! coord_kinds {
    ($($kind:ident),* $(,)?) => {
        /// Every coordinate kind by name.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum CoordKind {
            $($kind,)*
            PPUMemoryBlockOnDLS,
        }

        impl CoordKind {
            pub const ENUMERABLE: &'static [CoordKind] = &[$(CoordKind::$kind,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(CoordKind::$kind => stringify!($kind),)*
                    CoordKind::PPUMemoryBlockOnDLS => "PPUMemoryBlockOnDLS",
                }
            }

            /// Number of distinct values; `None` for non-enumerable kinds.
            pub fn size(self) -> Option<usize> {
                match self {
                    $(CoordKind::$kind => Some(<$kind as Coordinate>::SIZE),)*
                    CoordKind::PPUMemoryBlockOnDLS => None,
                }
            }
        }

        /// A coordinate of any kind.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum AnyCoord {
            $($kind($kind),)*
            PPUMemoryBlockOnDLS(PPUMemoryBlockOnDLS),
        }

        impl AnyCoord {
            pub fn kind(&self) -> CoordKind {
                match self {
                    $(AnyCoord::$kind(_) => CoordKind::$kind,)*
                    AnyCoord::PPUMemoryBlockOnDLS(_) => CoordKind::PPUMemoryBlockOnDLS,
                }
            }

            pub fn to_enum(&self) -> Option<usize> {
                match self {
                    $(AnyCoord::$kind(c) => Some(c.to_enum()),)*
                    AnyCoord::PPUMemoryBlockOnDLS(_) => None,
                }
            }

            /// Enumeration-order constructor for any enumerable kind.
            pub fn from_enum(kind: CoordKind, index: usize) -> Result<Self, CoordError> {
                match kind {
                    $(CoordKind::$kind => Ok(AnyCoord::$kind($kind::from_enum(index)?)),)*
                    CoordKind::PPUMemoryBlockOnDLS => Err(CoordError::OutOfRange {
                        kind: kind.name(),
                        value: index as i64,
                        min: 0,
                        max: -1,
                    }),
                }
            }
        }

        impl fmt::Display for AnyCoord {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(AnyCoord::$kind(c) => fmt::Display::fmt(c, f),)*
                    AnyCoord::PPUMemoryBlockOnDLS(c) => fmt::Display::fmt(c, f),
                }
            }
        }

        $(
            impl From<$kind> for AnyCoord {
                fn from(c: $kind) -> Self {
                    AnyCoord::$kind(c)
                }
            }
        )*
    };
}

coord_kinds!(
    HemisphereOnChip,
    QuadrantOnHemisphere,
    QuadrantOnChip,
    NeuronOnHemisphere,
    NeuronOnChip,
    SynapseRowOnQuadrant,
    SynapseColumnOnQuadrant,
    SynapseRowOnHemisphere,
    SynapseColumnOnHemisphere,
    SynapseRowOnChip,
    SynapseOnQuadrant,
    SynapseOnHemisphere,
    SynapseOnChip,
    CorrelationOnChip,
    NeuronConfigOnDLS,
    SpikeCounterOnDLS,
    SynapseDriverOnDLS,
    NeuronEventOutputOnDLS,
    TimerOnDLS,
    SpikePackToChipOnDLS,
    PPUOnDLS,
    PPUControlOnDLS,
    PPUMemoryWordOnPPU,
    PPUMemoryWordOnDLS,
);

impl From<PPUMemoryBlockOnDLS> for AnyCoord {
    fn from(c: PPUMemoryBlockOnDLS) -> Self {
        AnyCoord::PPUMemoryBlockOnDLS(c)
    }
}

impl fmt::Display for CoordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Range-checked construction of a linear coordinate from a plain integer.
///
/// Grid kinds take their enumeration index.
pub fn construct(kind: CoordKind, value: i64) -> Result<AnyCoord, CoordError> {
    let size = kind.size().ok_or(CoordError::OutOfRange {
        kind: kind.name(),
        value,
        min: 0,
        max: -1,
    })?;
    if value < 0 || value as usize >= size {
        return Err(out_of_range(kind, value, size));
    }
    AnyCoord::from_enum(kind, value as usize)
}

/// Cast a coordinate down to a lower hierarchy level (or to one of its ancestors).
pub fn project(coord: AnyCoord, target: CoordKind) -> Result<AnyCoord, CoordError> {
    use AnyCoord as A;
    use CoordKind as K;
    let invalid = || CoordError::InvalidProjection {
        from: coord.kind(),
        to: target,
    };
    if coord.kind() == target {
        return Ok(coord);
    }
    Ok(match (coord, target) {
        (A::SynapseOnChip(s), K::SynapseOnHemisphere) => s.to_synapse_on_hemisphere().into(),
        (A::SynapseOnChip(s), K::SynapseOnQuadrant) => s.to_synapse_on_quadrant().into(),
        (A::SynapseOnChip(s), K::HemisphereOnChip) => s.to_hemisphere_on_chip().into(),
        (A::SynapseOnChip(s), K::QuadrantOnChip) => s.to_quadrant_on_chip().into(),
        (A::SynapseOnChip(s), K::QuadrantOnHemisphere) => s.synapse.to_quadrant_on_hemisphere().into(),
        (A::SynapseOnChip(s), K::SynapseRowOnChip) => s.to_synapse_row_on_chip().into(),
        (A::SynapseOnChip(s), K::SynapseRowOnHemisphere) => s.synapse.row.into(),
        (A::SynapseOnChip(s), K::SynapseColumnOnHemisphere) => s.synapse.column.into(),
        (A::SynapseOnChip(s), K::SynapseRowOnQuadrant) => s.to_synapse_on_quadrant().row.into(),
        (A::SynapseOnChip(s), K::SynapseColumnOnQuadrant) => s.to_synapse_on_quadrant().column.into(),
        (A::SynapseOnHemisphere(s), K::SynapseOnQuadrant) => s.to_synapse_on_quadrant().into(),
        (A::SynapseOnHemisphere(s), K::QuadrantOnHemisphere) => s.to_quadrant_on_hemisphere().into(),
        (A::SynapseOnHemisphere(s), K::SynapseRowOnHemisphere) => s.row.into(),
        (A::SynapseOnHemisphere(s), K::SynapseColumnOnHemisphere) => s.column.into(),
        (A::SynapseOnHemisphere(s), K::SynapseRowOnQuadrant) => s.to_synapse_on_quadrant().row.into(),
        (A::SynapseOnHemisphere(s), K::SynapseColumnOnQuadrant) => s.to_synapse_on_quadrant().column.into(),
        (A::SynapseOnQuadrant(s), K::SynapseRowOnQuadrant) => s.row.into(),
        (A::SynapseOnQuadrant(s), K::SynapseColumnOnQuadrant) => s.column.into(),
        (A::CorrelationOnChip(c), _) => match project(A::SynapseOnChip(c.0), target) {
            Ok(p) => p,
            Err(_) => return Err(invalid()),
        },
        (A::QuadrantOnChip(q), K::HemisphereOnChip) => q.to_hemisphere_on_chip().into(),
        (A::QuadrantOnChip(q), K::QuadrantOnHemisphere) => q.to_quadrant_on_hemisphere().into(),
        (A::NeuronOnChip(n), K::NeuronOnHemisphere) => n.to_neuron_on_hemisphere().into(),
        (A::NeuronOnChip(n), K::HemisphereOnChip) => n.to_hemisphere_on_chip().into(),
        (A::SynapseRowOnChip(r), K::SynapseRowOnHemisphere) => r.to_synapse_row_on_hemisphere().into(),
        (A::SynapseRowOnChip(r), K::HemisphereOnChip) => r.to_hemisphere_on_chip().into(),
        (A::PPUMemoryWordOnDLS(w), K::PPUMemoryWordOnPPU) => w.word.into(),
        (A::PPUMemoryWordOnDLS(w), K::PPUOnDLS) => w.ppu.into(),
        _ => return Err(invalid()),
    })
}

/// Combine a lower-level coordinate with the ancestor it was projected from.
pub fn combine(child: AnyCoord, parent: AnyCoord) -> Result<AnyCoord, CoordError> {
    use AnyCoord as A;
    Ok(match (child, parent) {
        (A::SynapseOnHemisphere(s), A::HemisphereOnChip(h)) => SynapseOnChip::new(s, h).into(),
        (A::SynapseOnQuadrant(s), A::QuadrantOnChip(q)) => SynapseOnChip::from_quadrant(s, q).into(),
        (A::SynapseOnQuadrant(s), A::QuadrantOnHemisphere(q)) => SynapseOnHemisphere::from_quadrant(s, q).into(),
        (A::QuadrantOnHemisphere(q), A::HemisphereOnChip(h)) => QuadrantOnChip::from_parts(q, h).into(),
        (A::NeuronOnHemisphere(n), A::HemisphereOnChip(h)) => NeuronOnChip::from_parts(n, h).into(),
        (A::SynapseRowOnHemisphere(r), A::HemisphereOnChip(h)) => SynapseRowOnChip::from_parts(r, h).into(),
        (A::PPUMemoryWordOnPPU(w), A::PPUOnDLS(p)) => PPUMemoryWordOnDLS::new(w, p).into(),
        _ => {
            return Err(CoordError::InvalidCombination {
                child: child.kind(),
                parent: parent.kind(),
            })
        }
    })
}

/// Convert between corresponding components (e.g. synapse to its post-synaptic neuron).
pub fn convert_kind(coord: AnyCoord, target: CoordKind) -> Result<AnyCoord, CoordError> {
    use AnyCoord as A;
    use CoordKind as K;
    Ok(match (coord, target) {
        (A::SynapseOnChip(s), K::NeuronOnChip) => s.to_neuron_on_chip().into(),
        (A::SynapseOnChip(s), K::SynapseDriverOnDLS) => s.to_synapse_driver_on_dls().into(),
        (A::SynapseOnChip(s), K::CorrelationOnChip) => CorrelationOnChip(s).into(),
        (A::CorrelationOnChip(c), K::SynapseOnChip) => c.0.into(),
        (A::SynapseOnHemisphere(s), K::NeuronOnHemisphere) => s.to_neuron_on_hemisphere().into(),
        (A::NeuronOnChip(n), K::NeuronConfigOnDLS) => n.to_neuron_config_on_dls().into(),
        (A::NeuronOnChip(n), K::SpikeCounterOnDLS) => n.to_spike_counter_on_dls().into(),
        (A::NeuronOnChip(n), K::NeuronEventOutputOnDLS) => n.to_neuron_event_output_on_dls().into(),
        (A::NeuronConfigOnDLS(n), K::NeuronOnChip) => n.to_neuron_on_chip().into(),
        (A::SpikeCounterOnDLS(n), K::NeuronOnChip) => n.to_neuron_on_chip().into(),
        (A::SynapseRowOnChip(r), K::SynapseDriverOnDLS) => r.to_synapse_driver_on_dls().into(),
        (A::SynapseDriverOnDLS(d), K::SynapseRowOnChip) => d.to_synapse_row_on_chip().into(),
        (A::PPUOnDLS(p), K::PPUControlOnDLS) => p.to_ppu_control_on_dls().into(),
        (A::PPUControlOnDLS(p), K::PPUOnDLS) => p.to_ppu_on_dls().into(),
        _ => {
            return Err(CoordError::NoConversion {
                from: coord.kind(),
                to: target,
            })
        }
    })
}
