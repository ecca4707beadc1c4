use super::mm::{MiddleMemory, Payload};
use super::wm::WorkingMemory;
use super::MemoryError;
use crate::codec::{Codebook, HoloVector};
use crate::time::SimTime;

/// The activation-weighted superposition broadcast to every predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub vector: HoloVector,
    /// Set when there was nothing to superpose; `vector` is then all zeros.
    pub zero: bool,
    pub wm_sources: usize,
    pub mm_sources: usize,
}

/// Softmax weights, shifted by the maximum for stability.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let Some(max) = xs.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sum each non-empty WM buffer's packed chunk with weight `wm_weight`, plus
/// every retrievable MM entry weighted by the softmax of activations, then
/// normalize.
pub fn context_vector(
    wm: &WorkingMemory,
    mm: &MiddleMemory,
    book: &Codebook,
    now: SimTime,
    wm_weight: f64,
) -> Result<ContextVector, MemoryError> {
    let mut acc = HoloVector::zeros(book.dim());
    let mut wm_sources = 0;
    for (_, chunk) in wm.chunks() {
        acc.add_scaled(&book.pack_cached(chunk.content()), wm_weight);
        wm_sources += 1;
    }
    let retrievable = mm.retrieve(wm, now, None, None, usize::MAX)?;
    let weights = softmax(&retrievable.iter().map(|r| r.activation).collect::<Vec<_>>());
    let mut mm_sources = 0;
    for (hit, w) in retrievable.iter().zip(weights) {
        let entry = mm.get(hit.id).expect("retrieved entry exists");
        match entry.payload() {
            Payload::Chunk(c) => acc.add_scaled(&book.pack_cached(c), w),
            Payload::Vector { vector, .. } if vector.dim() == book.dim() => acc.add_scaled(vector, w),
            Payload::Vector { .. } => continue,
        }
        mm_sources += 1;
    }
    let zero = acc.is_zero();
    Ok(ContextVector {
        vector: acc.normalized(),
        zero,
        wm_sources,
        mm_sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::{ChunkContent, IdGen, Symbol};
    use crate::codec::cosine;
    use crate::memory::mm::MmParams;
    use crate::memory::wm::{central, BufferContent};

    fn c(ctype: &str, slots: &[(&str, &str)]) -> ChunkContent {
        ChunkContent::parse(ctype, slots).unwrap()
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[3.0]), vec![1.0]);
        assert_eq!(softmax(&[0.7, 0.7]), vec![0.5, 0.5]);
        assert!(softmax(&[]).is_empty());
    }

    #[test]
    fn empty_everything_is_flagged_zero() {
        let book = Codebook::new(64, 1);
        let ctx = context_vector(
            &WorkingMemory::default(),
            &MiddleMemory::new(MmParams::default()),
            &book,
            SimTime::from_secs(1),
            1.0,
        )
        .unwrap();
        assert!(ctx.zero);
        assert!(ctx.vector.is_zero());
    }

    #[test]
    fn single_entry_is_its_own_context() {
        let book = Codebook::new(256, 1);
        let mut mm = MiddleMemory::new(MmParams::default());
        let content = c("dog", &[("name", "Fido")]);
        mm.deposit(Payload::Chunk(content.clone()), Symbol::lit("v"), SimTime::ZERO)
            .unwrap();
        let ctx = context_vector(&WorkingMemory::default(), &mm, &book, SimTime::from_secs(1), 1.0).unwrap();
        assert!(!ctx.zero);
        assert!((cosine(&ctx.vector, &book.pack(&content)) - 1.0).abs() < 1e-9);
        assert!((ctx.vector.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wm_content_dominates_equal_mm_components() {
        let book = Codebook::new(1024, 21);
        let mut mm = MiddleMemory::new(MmParams::default());
        let a = c("bone", &[("kind", "beef")]);
        let b = c("tree", &[("kind", "oak")]);
        mm.deposit(Payload::Chunk(a.clone()), Symbol::lit("v"), SimTime::ZERO)
            .unwrap();
        mm.deposit(Payload::Chunk(b.clone()), Symbol::lit("v"), SimTime::ZERO)
            .unwrap();
        let mut wm = WorkingMemory::default();
        let goal = Symbol::lit("goal");
        wm.add_buffer(goal.clone(), central()).unwrap();
        let held = c("walk", &[("with", "Fido")]);
        let mut ids = IdGen::new();
        wm.write(&central(), &goal, BufferContent::Chunk(ids.chunk(held.clone())), false)
            .unwrap();
        let ctx = context_vector(&wm, &mm, &book, SimTime::from_secs(1), 1.0).unwrap();
        let to_wm = cosine(&ctx.vector, &book.pack(&held));
        let to_a = cosine(&ctx.vector, &book.pack(&a));
        let to_b = cosine(&ctx.vector, &book.pack(&b));
        assert!(to_wm > to_a && to_wm > to_b, "{to_wm} {to_a} {to_b}");
        assert_eq!((ctx.wm_sources, ctx.mm_sources), (1, 2));
    }
}
