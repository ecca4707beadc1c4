//! Holographic codec: packs chunks into real vectors and unpacks them again.
//!
//! Every symbol gets a random atom, a unit vector whose entries are drawn
//! from a normal distribution seeded by `(codebook seed, symbol name)`. A chunk
//! is packed as the normalized superposition of `role ⊛ value` for each slot,
//! plus `isa ⊛ type`, where `⊛` is circular convolution. Unpacking a slot is
//! circular correlation with the role atom followed by cleanup: the nearest
//! known atom by cosine similarity.
//!
//! Convolution runs in the frequency domain. Atom spectra and packed chunk
//! vectors are memoized inside the codebook, which is `Sync` and can be shared.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunk::{ChunkContent, Symbol};

pub const DEFAULT_DIMENSION: usize = 1024;
pub const DEFAULT_CLEANUP_THRESHOLD: f64 = 0.2;

/// Packed chunk caches are dropped wholesale past this many entries.
const PACK_CACHE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("codebook has no atoms")]
    EmptyCodebook,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector has non-finite entries")]
    NonFinite,
}

/// A real vector in the codebook's space.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HoloVector(Vec<f64>);

impl HoloVector {
    pub fn new(values: Vec<f64>) -> Result<Self, CodecError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &HoloVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Unit-length copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> HoloVector {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        HoloVector(self.0.iter().map(|v| v / n).collect())
    }

    pub fn add_scaled(&mut self, other: &HoloVector, weight: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += weight * b;
        }
    }

    pub fn scaled(&self, factor: f64) -> HoloVector {
        HoloVector(self.0.iter().map(|v| v * factor).collect())
    }
}

impl fmt::Debug for HoloVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HoloVector(dim={}, norm={:.4})", self.dim(), self.norm())
    }
}

/// Cosine similarity; zero if either side is the zero vector.
pub fn cosine(a: &HoloVector, b: &HoloVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

struct Atom {
    vector: HoloVector,
    spectrum: Vec<Complex<f64>>,
}

/// Symbol → atom map plus the FFT plans used for binding.
pub struct Codebook {
    dim: usize,
    seed: u64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    atoms: RwLock<BTreeMap<Symbol, Arc<Atom>>>,
    packs: RwLock<HashMap<ChunkContent, Arc<HoloVector>>>,
}

impl fmt::Debug for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Codebook")
            .field("dim", &self.dim)
            .field("seed", &self.seed)
            .field("atoms", &self.len())
            .finish()
    }
}

impl Clone for Codebook {
    fn clone(&self) -> Self {
        let out = Codebook::new(self.dim, self.seed);
        *out.atoms.write().unwrap() = self.atoms.read().unwrap().clone();
        out
    }
}

impl Codebook {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "codebook dimension must be positive");
        let mut planner = FftPlanner::new();
        Self {
            dim,
            seed,
            fft: planner.plan_fft_forward(dim),
            ifft: planner.plan_fft_inverse(dim),
            atoms: RwLock::new(BTreeMap::new()),
            packs: RwLock::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.atoms.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Known symbols in lexicographic order.
    pub fn symbols(&self) -> Vec<Symbol> {
        self.atoms.read().unwrap().keys().cloned().collect()
    }

    /// The atom for `symbol`, generating and memoizing it on first use.
    pub fn atom(&self, symbol: &Symbol) -> HoloVector {
        self.entry(symbol).vector.clone()
    }

    fn entry(&self, symbol: &Symbol) -> Arc<Atom> {
        if let Some(a) = self.atoms.read().unwrap().get(symbol) {
            return a.clone();
        }
        let vector = self.inverse(unitary_spectrum(self.dim, self.seed, symbol)).normalized();
        let spectrum = self.spectrum(&vector);
        let atom = Arc::new(Atom { vector, spectrum });
        self.atoms
            .write()
            .unwrap()
            .entry(symbol.clone())
            .or_insert(atom)
            .clone()
    }

    fn check_dim(&self, v: &HoloVector) -> Result<(), CodecError> {
        if v.dim() != self.dim {
            return Err(CodecError::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    fn spectrum(&self, v: &HoloVector) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = v.0.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }

    fn inverse(&self, mut spectrum: Vec<Complex<f64>>) -> HoloVector {
        self.ifft.process(&mut spectrum);
        let scale = 1.0 / self.dim as f64;
        HoloVector(spectrum.into_iter().map(|c| c.re * scale).collect())
    }

    /// Circular convolution.
    pub fn bind(&self, a: &HoloVector, b: &HoloVector) -> Result<HoloVector, CodecError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let sa = self.spectrum(a);
        let sb = self.spectrum(b);
        Ok(self.inverse(sa.iter().zip(&sb).map(|(x, y)| x * y).collect()))
    }

    /// Circular correlation: the approximate inverse of [`Codebook::bind`].
    pub fn unbind(&self, trace: &HoloVector, key: &HoloVector) -> Result<HoloVector, CodecError> {
        self.check_dim(trace)?;
        self.check_dim(key)?;
        let st = self.spectrum(trace);
        let sk = self.spectrum(key);
        Ok(self.inverse(st.iter().zip(&sk).map(|(t, k)| t * k.conj()).collect()))
    }

    /// Pack chunk content into a unit vector.
    pub fn pack(&self, content: &ChunkContent) -> HoloVector {
        let isa = self.entry(&Symbol::isa());
        let ty = self.entry(content.ctype());
        let mut acc: Vec<Complex<f64>> = isa.spectrum.iter().zip(&ty.spectrum).map(|(a, b)| a * b).collect();
        for (slot, value) in content.slots() {
            let r = self.entry(slot);
            let v = self.entry(value);
            for ((o, a), b) in acc.iter_mut().zip(&r.spectrum).zip(&v.spectrum) {
                *o += a * b;
            }
        }
        self.inverse(acc).normalized()
    }

    /// [`Codebook::pack`] with memoization by content.
    pub fn pack_cached(&self, content: &ChunkContent) -> Arc<HoloVector> {
        if let Some(v) = self.packs.read().unwrap().get(content) {
            return v.clone();
        }
        let v = Arc::new(self.pack(content));
        let mut packs = self.packs.write().unwrap();
        if packs.len() >= PACK_CACHE_LIMIT {
            packs.clear();
        }
        packs.entry(content.clone()).or_insert(v).clone()
    }

    /// Nearest atom by cosine similarity. Ties (within 1e-12) go to the
    /// lexicographically smaller symbol.
    pub fn cleanup(&self, v: &HoloVector) -> Result<(Symbol, f64), CodecError> {
        self.check_dim(v)?;
        let atoms = self.atoms.read().unwrap();
        let norm = v.norm();
        let mut best: Option<(&Symbol, f64)> = None;
        for (sym, atom) in atoms.iter() {
            let sim = if norm == 0.0 { 0.0 } else { v.dot(&atom.vector) / norm };
            match best {
                Some((_, b)) if sim <= b + 1e-12 => {}
                _ => best = Some((sym, sim)),
            }
        }
        best.map(|(s, sim)| (s.clone(), sim)).ok_or(CodecError::EmptyCodebook)
    }

    /// Every atom whose similarity to `v` is at least `threshold`.
    pub fn similar_atoms(&self, v: &HoloVector, threshold: f64) -> Result<Vec<(Symbol, f64)>, CodecError> {
        self.check_dim(v)?;
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(Vec::new());
        }
        let atoms = self.atoms.read().unwrap();
        Ok(atoms
            .iter()
            .map(|(s, a)| (s, v.dot(&a.vector) / norm))
            .filter(|(_, sim)| *sim >= threshold)
            .map(|(s, sim)| (s.clone(), sim))
            .collect())
    }

    /// Schema-directed unpacking: for each requested slot name, unbind by
    /// its role atom and clean up. Pass `isa` to recover the chunk type.
    pub fn unpack(&self, v: &HoloVector, slots: &[Symbol], threshold: f64) -> Result<Unpacked, CodecError> {
        self.check_dim(v)?;
        if self.is_empty() {
            return Err(CodecError::EmptyCodebook);
        }
        let sv = self.spectrum(v);
        let mut readings = Vec::with_capacity(slots.len());
        for slot in slots {
            let role = self.entry(slot);
            let probe = self.inverse(sv.iter().zip(&role.spectrum).map(|(t, k)| t * k.conj()).collect());
            let (best, similarity) = self.cleanup(&probe)?;
            readings.push(SlotReading {
                slot: slot.clone(),
                value: (similarity >= threshold).then(|| best.clone()),
                best,
                similarity,
            });
        }
        Ok(Unpacked { readings })
    }

    /// Decode the strongest symbols carried by `v` under any of `roles`.
    /// Returns at most `k` symbols with similarity ≥ `threshold`, sorted by
    /// similarity (descending) then name.
    pub fn decode_symbols(
        &self,
        v: &HoloVector,
        roles: &[Symbol],
        threshold: f64,
        k: usize,
    ) -> Result<Vec<(Symbol, f64)>, CodecError> {
        self.check_dim(v)?;
        if v.is_zero() || k == 0 {
            return Ok(Vec::new());
        }
        let sv = self.spectrum(v);
        let mut best: BTreeMap<Symbol, f64> = BTreeMap::new();
        for role in roles {
            let r = self.entry(role);
            let probe = self.inverse(sv.iter().zip(&r.spectrum).map(|(t, k)| t * k.conj()).collect());
            for (sym, sim) in self.similar_atoms(&probe, threshold)? {
                let e = best.entry(sym).or_insert(f64::NEG_INFINITY);
                if sim > *e {
                    *e = sim;
                }
            }
        }
        let mut out: Vec<_> = best.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(k);
        Ok(out)
    }
}

/// A real vector whose spectrum has unit modulus everywhere, with phases
/// drawn from a generator seeded by `(seed, symbol)`. Correlating with such a
/// vector inverts convolution exactly.
fn unitary_spectrum(dim: usize, seed: u64, symbol: &Symbol) -> Vec<Complex<f64>> {
    let mut h = Sha256::new();
    h.update(b"mm-arch/atom");
    h.update(seed.to_le_bytes());
    h.update(symbol.as_str().as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut spectrum = vec![Complex::new(0.0, 0.0); dim];
    let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
    spectrum[0] = Complex::new(sign(&mut rng), 0.0);
    for k in 1..dim.div_ceil(2) {
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        spectrum[k] = Complex::from_polar(1.0, phase);
        spectrum[dim - k] = spectrum[k].conj();
    }
    if dim.is_multiple_of(2) && dim > 1 {
        spectrum[dim / 2] = Complex::new(sign(&mut rng), 0.0);
    }
    spectrum
}

/// Result of unpacking one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotReading {
    pub slot: Symbol,
    /// The cleaned-up value, or `None` when below the cleanup threshold.
    pub value: Option<Symbol>,
    pub best: Symbol,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unpacked {
    pub readings: Vec<SlotReading>,
}

impl Unpacked {
    pub fn get(&self, slot: &Symbol) -> Option<&SlotReading> {
        self.readings.iter().find(|r| &r.slot == slot)
    }

    /// Assemble a chunk from the readings. Needs an `isa` reading above
    /// threshold; absent slots are left out.
    pub fn to_chunk(&self) -> Option<ChunkContent> {
        let ctype = self.get(&Symbol::isa())?.value.clone()?;
        let slots = self
            .readings
            .iter()
            .filter(|r| r.slot.as_str() != crate::chunk::ISA)
            .filter_map(|r| r.value.clone().map(|v| (r.slot.clone(), v)))
            .collect();
        ChunkContent::new(ctype, slots).ok()
    }
}
