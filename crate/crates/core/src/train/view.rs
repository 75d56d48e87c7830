use std::cell::{Cell, RefCell};
use std::collections::BTreeSet;

use crate::backbone::{extract_raw_features, stack_stats, StatVector};
use crate::dataset::{DomainDataset, DomainTag};
use crate::error::{contract, Result};
use crate::rng::{shuffle, stream};
use crate::tensor::Matrix;

/// Descriptor of every sample, in dataset order.
pub fn descriptors(ds: &DomainDataset) -> Result<Vec<StatVector>> {
    ds.samples.iter().map(extract_raw_features).collect()
}

/// Read-audited window onto a subset of a dataset.
pub struct DomainView<'a> {
    dataset: &'a DomainDataset,
    stats: &'a [StatVector],
    indices: Vec<usize>,
    reads: Cell<u64>,
    touched: RefCell<BTreeSet<usize>>,
}

impl<'a> DomainView<'a> {
    pub fn new(dataset: &'a DomainDataset, stats: &'a [StatVector], indices: Vec<usize>) -> Result<Self> {
        if stats.len() != dataset.len() {
            return Err(contract("one descriptor per sample expected"));
        }
        if indices.is_empty() {
            return Err(contract("empty data view"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(contract(format!(
                "index {bad} out of range for {} samples",
                dataset.len()
            )));
        }
        Ok(Self {
            dataset,
            stats,
            indices,
            reads: Cell::new(0),
            touched: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn full(dataset: &'a DomainDataset, stats: &'a [StatVector]) -> Result<Self> {
        Self::new(dataset, stats, (0..dataset.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn domain_tag(&self) -> DomainTag {
        self.dataset.domain_tag
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn record(&self, positions: &[usize]) -> Vec<usize> {
        self.reads.set(self.reads.get() + positions.len() as u64);
        let idx: Vec<usize> = positions.iter().map(|&p| self.indices[p]).collect();
        self.touched.borrow_mut().extend(&idx);
        idx
    }

    /// Descriptors and scores at view positions.
    pub fn fetch(&self, positions: &[usize]) -> (Matrix, Vec<f64>) {
        let idx = self.record(positions);
        let stats: Vec<StatVector> = idx.iter().map(|&i| self.stats[i].clone()).collect();
        let mos = idx.iter().map(|&i| self.dataset.samples[i].mos).collect();
        (stack_stats(&stats).expect("descriptors are validated"), mos)
    }

    /// Descriptors only: the unlabelled path used for target data.
    pub fn fetch_unlabeled(&self, positions: &[usize]) -> Matrix {
        let idx = self.record(positions);
        let stats: Vec<StatVector> = idx.iter().map(|&i| self.stats[i].clone()).collect();
        stack_stats(&stats).expect("descriptors are validated")
    }

    pub(crate) fn all_stats_for_normalizer(&self) -> Vec<StatVector> {
        let all: Vec<usize> = (0..self.len()).collect();
        let idx = self.record(&all);
        idx.iter().map(|&i| self.stats[i].clone()).collect()
    }

    /// Number of sample reads so far.
    pub fn reads(&self) -> u64 {
        self.reads.get()
    }

    /// Dataset indices read so far.
    pub fn touched(&self) -> BTreeSet<usize> {
        self.touched.borrow().clone()
    }

    pub fn touched_contents(&self) -> BTreeSet<u32> {
        self.touched
            .borrow()
            .iter()
            .map(|&i| self.dataset.samples[i].content_id)
            .collect()
    }
}

/// Shuffled mini-batches of view positions for one epoch. A trailing batch
/// of a single sample is merged into the previous one (pairwise losses
/// need two samples).
pub fn epoch_batches(n: usize, batch: usize, seed: u64, phase: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut stream(seed, &[0xBA7C, phase, epoch as u64]));
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Endless stream of target positions: a fresh shuffle per pass, handed out
/// in order, so batch `k` is paired by position with source batch `k`.
pub struct TargetSampler {
    n: usize,
    seed: u64,
    phase: u64,
    pass: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl TargetSampler {
    pub fn new(n: usize, seed: u64, phase: u64) -> Self {
        Self {
            n,
            seed,
            phase,
            pass: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.order = (0..self.n).collect();
                shuffle(
                    &mut self.order,
                    &mut stream(self.seed, &[0x7A56, self.phase, self.pass]),
                );
                self.pass += 1;
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}
