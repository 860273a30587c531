//! Keyed columnar buffers: per-environment staging slots feeding a ring memory.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub dim: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }
}

fn validate_fields(fields: &[FieldSpec]) -> Result<()> {
    for (i, f) in fields.iter().enumerate() {
        if f.dim == 0 {
            return Err(Error::Invalid(format!("field `{}` has zero width", f.name)));
        }
        if fields[..i].iter().any(|g| g.name == f.name) {
            return Err(Error::Invalid(format!("duplicate field `{}`", f.name)));
        }
    }
    Ok(())
}

/// Row-aligned columns, one matrix per field.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    fields: Vec<FieldSpec>,
    columns: Vec<Matrix<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn empty(fields: &[FieldSpec]) -> Self {
        Self {
            fields: fields.to_vec(),
            columns: fields.iter().map(|f| Matrix::zeros(0, f.dim)).collect(),
        }
    }

    pub fn from_columns(fields: Vec<FieldSpec>, columns: Vec<Matrix<T>>) -> Result<Self> {
        validate_fields(&fields)?;
        if fields.len() != columns.len() {
            return Err(Error::shape("one column per field required"));
        }
        let rows = columns.first().map_or(0, |c| c.rows());
        for (f, c) in fields.iter().zip(&columns) {
            if c.cols() != f.dim || c.rows() != rows {
                return Err(Error::shape(format!(
                    "column `{}` is {}x{}, expected {rows}x{}",
                    f.name,
                    c.rows(),
                    c.cols(),
                    f.dim
                )));
            }
        }
        Ok(Self { fields, columns })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::Invalid(format!("batch has no field `{name}`")))
    }

    /// Single-width field as a flat slice.
    pub fn scalar(&self, name: &str) -> Result<&[T]> {
        let m = self.get(name)?;
        if m.cols() != 1 {
            return Err(Error::shape(format!("field `{name}` is not scalar")));
        }
        Ok(m.as_slice())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            fields: self.fields.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c.select_rows(indices))
                .collect(),
        }
    }

    /// Values of row `i`, in field order.
    pub fn row(&self, i: usize) -> Vec<&[T]> {
        self.columns.iter().map(|c| c.row(i)).collect()
    }

    /// Appends a row given in field order.
    pub fn push_row(&mut self, values: &[&[T]]) -> Result<()> {
        check_row(&self.fields, values)?;
        for (c, v) in self.columns.iter_mut().zip(values) {
            c.push_row(v)?;
        }
        Ok(())
    }
}

fn check_row<T>(fields: &[FieldSpec], values: &[&[T]]) -> Result<()> {
    if values.len() != fields.len() {
        return Err(Error::shape(format!(
            "row has {} fields, expected {}",
            values.len(),
            fields.len()
        )));
    }
    for (f, v) in fields.iter().zip(values) {
        if v.len() != f.dim {
            return Err(Error::shape(format!(
                "field `{}` has width {}, expected {}",
                f.name,
                v.len(),
                f.dim
            )));
        }
    }
    Ok(())
}

/// Orders a keyed row by field spec, rejecting missing, unknown or mis-sized entries.
fn order_keyed<'a, T>(fields: &[FieldSpec], row: &[(&str, &'a [T])]) -> Result<Vec<&'a [T]>> {
    if let Some((k, _)) = row
        .iter()
        .find(|(k, _)| !fields.iter().any(|f| f.name == *k))
    {
        return Err(Error::Invalid(format!("unknown field `{k}`")));
    }
    let ordered = fields
        .iter()
        .map(|f| {
            row.iter()
                .find(|(k, _)| *k == f.name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Invalid(format!("row is missing field `{}`", f.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    check_row(fields, &ordered)?;
    Ok(ordered)
}

/// Append-only per-environment slots.
#[derive(Debug, Clone)]
pub struct StagingBuffer<T> {
    fields: Vec<FieldSpec>,
    // slots[env][field] holds the flattened rows
    slots: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> StagingBuffer<T> {
    pub fn new(n_envs: usize, fields: &[FieldSpec]) -> Result<Self> {
        validate_fields(fields)?;
        Ok(Self {
            fields: fields.to_vec(),
            slots: (0..n_envs)
                .map(|_| vec![Vec::new(); fields.len()])
                .collect(),
        })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn n_envs(&self) -> usize {
        self.slots.len()
    }

    fn slot(&self, env: usize) -> Result<&Vec<Vec<T>>> {
        self.slots.get(env).ok_or_else(|| {
            Error::Invalid(format!("env index {env} out of range {}", self.slots.len()))
        })
    }

    /// Appends a keyed row to the slot of `env`.
    pub fn store(&mut self, env: usize, row: &[(&str, &[T])]) -> Result<()> {
        let ordered = order_keyed(&self.fields, row)?;
        self.store_ordered(env, &ordered)
    }

    /// Appends a row given in field order.
    pub fn store_ordered(&mut self, env: usize, values: &[&[T]]) -> Result<()> {
        self.slot(env)?;
        check_row(&self.fields, values)?;
        for (col, v) in self.slots[env].iter_mut().zip(values) {
            col.extend_from_slice(v);
        }
        Ok(())
    }

    pub fn env_len(&self, env: usize) -> usize {
        self.slots[env][0].len() / self.fields[0].dim
    }

    pub fn total_len(&self) -> usize {
        (0..self.slots.len()).map(|e| self.env_len(e)).sum()
    }

    /// Flattened values of one field for one env slot.
    pub fn env_field(&self, env: usize, name: &str) -> Result<&[T]> {
        let i = self
            .fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Invalid(format!("no field `{name}`")))?;
        Ok(&self.slot(env)?[i])
    }

    /// Removes the first `n` rows of an env slot and returns them.
    pub fn drain_env_prefix(&mut self, env: usize, n: usize) -> Result<Batch<T>> {
        let len = self.slot(env).map(|_| self.env_len(env))?;
        if n > len {
            return Err(Error::Insufficient(format!(
                "env {env} holds {len} rows, {n} requested"
            )));
        }
        let columns = self.slots[env]
            .iter_mut()
            .zip(&self.fields)
            .map(|(col, f)| {
                let taken: Vec<T> = col.drain(..n * f.dim).collect();
                Matrix::from_vec(n, f.dim, taken)
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::from_columns(self.fields.clone(), columns)
    }

    /// Moves every staged row into `dest`, env-major, and clears the slots.
    pub fn collect(&mut self, dest: &mut RingBuffer<T>) -> Result<usize> {
        if dest.fields() != self.fields.as_slice() {
            return Err(Error::shape("staging and ring buffer field specs differ"));
        }
        let mut moved = 0;
        for env in 0..self.slots.len() {
            let n = self.env_len(env);
            let batch = self.drain_env_prefix(env, n)?;
            dest.insert(&batch)?;
            moved += n;
        }
        Ok(moved)
    }

    pub fn clear(&mut self) {
        for slot in &mut self.slots {
            slot.iter_mut().for_each(Vec::clear);
        }
    }
}

/// Fixed-capacity keyed memory overwriting its oldest rows.
#[derive(Debug, Clone)]
pub struct RingBuffer<T> {
    capacity: usize,
    fields: Vec<FieldSpec>,
    storage: Vec<Vec<T>>,
    head: usize,
    count: usize,
}

impl<T: Scalar> RingBuffer<T> {
    pub fn new(capacity: usize, fields: &[FieldSpec]) -> Result<Self> {
        validate_fields(fields)?;
        if capacity == 0 {
            return Err(Error::Invalid(
                "ring buffer capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            fields: fields.to_vec(),
            storage: fields
                .iter()
                .map(|f| vec![T::zero(); capacity * f.dim])
                .collect(),
            head: 0,
            count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    /// Appends one row given in field order.
    pub fn insert_row(&mut self, values: &[&[T]]) -> Result<()> {
        check_row(&self.fields, values)?;
        for ((store, f), v) in self.storage.iter_mut().zip(&self.fields).zip(values) {
            store[self.head * f.dim..(self.head + 1) * f.dim].copy_from_slice(v);
        }
        self.head = (self.head + 1) % self.capacity;
        self.count = (self.count + 1).min(self.capacity);
        Ok(())
    }

    pub fn insert(&mut self, rows: &Batch<T>) -> Result<()> {
        if rows.fields() != self.fields.as_slice() {
            return Err(Error::shape(
                "inserted batch fields differ from the ring layout",
            ));
        }
        // only the newest `capacity` rows can survive
        let skip = rows.len().saturating_sub(self.capacity);
        for i in skip..rows.len() {
            self.insert_row(&rows.row(i))?;
        }
        Ok(())
    }

    fn physical(&self, logical: usize) -> usize {
        (self.head + self.capacity - self.count + logical) % self.capacity
    }

    fn gather(&self, logical: impl Iterator<Item = usize> + Clone) -> Batch<T> {
        let columns = self
            .storage
            .iter()
            .zip(&self.fields)
            .map(|(store, f)| {
                let mut data = Vec::new();
                let mut rows = 0;
                for l in logical.clone() {
                    let p = self.physical(l);
                    data.extend_from_slice(&store[p * f.dim..(p + 1) * f.dim]);
                    rows += 1;
                }
                Matrix::from_vec(rows, f.dim, data).expect("sized by construction")
            })
            .collect();
        Batch {
            fields: self.fields.clone(),
            columns,
        }
    }

    /// Uniform sample with replacement over the valid rows.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch<T>> {
        if self.count < batch_size || self.count == 0 {
            return Err(Error::Insufficient(format!(
                "ring holds {} rows, {batch_size} requested",
                self.count
            )));
        }
        let idx: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..self.count))
            .collect();
        Ok(self.gather(idx.into_iter()))
    }

    /// Valid rows, oldest first, without removing them.
    pub fn snapshot(&self) -> Batch<T> {
        self.gather(0..self.count)
    }

    /// Returns every valid row oldest first and empties the buffer.
    pub fn drain_all(&mut self) -> Batch<T> {
        let out = self.snapshot();
        self.head = 0;
        self.count = 0;
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use std::collections::VecDeque;

    use super::*;

    /// Bounded deque reference model used by the property tests.
    #[derive(Debug, Clone)]
    struct DequeOracle<T> {
        capacity: usize,
        rows: VecDeque<Vec<Vec<T>>>,
    }

    impl<T: Clone> DequeOracle<T> {
        fn new(capacity: usize) -> Self {
            Self {
                capacity,
                rows: VecDeque::new(),
            }
        }

        fn push(&mut self, row: Vec<Vec<T>>) {
            if self.rows.len() == self.capacity {
                self.rows.pop_front();
            }
            self.rows.push_back(row);
        }

        fn drain(&mut self) -> Vec<Vec<Vec<T>>> {
            self.rows.drain(..).collect()
        }
    }

    fn fields() -> Vec<FieldSpec> {
        vec![FieldSpec::new("obs", 2), FieldSpec::new("reward", 1)]
    }

    fn scalar_ring(cap: usize) -> RingBuffer<f64> {
        RingBuffer::new(cap, &[FieldSpec::new("x", 1)]).unwrap()
    }

    fn ring_values(r: &RingBuffer<f64>) -> Vec<f64> {
        r.snapshot().scalar("x").unwrap().to_vec()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(
            RingBuffer::<f64>::new(3, &[FieldSpec::new("a", 1), FieldSpec::new("a", 2)]).is_err()
        );
        assert!(RingBuffer::<f64>::new(3, &[FieldSpec::new("a", 0)]).is_err());
        assert!(RingBuffer::<f64>::new(0, &[FieldSpec::new("a", 1)]).is_err());
    }

    #[test]
    fn staging_store_per_env() {
        let mut s = StagingBuffer::<f64>::new(2, &fields()).unwrap();
        for i in 0..3 {
            s.store(0, &[("obs", &[i as f64, 0.0]), ("reward", &[1.0])])
                .unwrap();
        }
        assert_eq!((s.env_len(0), s.env_len(1)), (3, 0));
        assert!(s.store(0, &[("obs", &[0.0, 0.0])]).is_err());
        assert!(s.store(0, &[("obs", &[0.0]), ("reward", &[1.0])]).is_err());
        assert!(s
            .store(5, &[("obs", &[0.0, 0.0]), ("reward", &[1.0])])
            .is_err());
        assert!(s
            .store(
                0,
                &[("obs", &[0.0, 0.0]), ("reward", &[1.0]), ("extra", &[1.0])]
            )
            .is_err());
    }

    #[test]
    fn staging_interleaved_order_and_collect() {
        let f = [FieldSpec::new("x", 1)];
        let mut s = StagingBuffer::<f64>::new(2, &f).unwrap();
        s.store(1, &[("x", &[10.0])]).unwrap();
        s.store(0, &[("x", &[0.0])]).unwrap();
        s.store(1, &[("x", &[11.0])]).unwrap();
        s.store(0, &[("x", &[1.0])]).unwrap();
        s.store(1, &[("x", &[12.0])]).unwrap();
        let mut r = RingBuffer::new(10, &f).unwrap();
        assert_eq!(s.collect(&mut r).unwrap(), 5);
        assert_eq!(s.total_len(), 0);
        assert_eq!(ring_values(&r), vec![0.0, 1.0, 10.0, 11.0, 12.0]);
        assert_eq!(s.collect(&mut r).unwrap(), 0);
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn collect_rejects_mismatched_layout() {
        let mut s = StagingBuffer::<f64>::new(1, &fields()).unwrap();
        let mut r = scalar_ring(3);
        assert!(s.collect(&mut r).is_err());
    }

    #[test]
    fn ring_wraparound() {
        let mut r = scalar_ring(3);
        for v in 1..=4 {
            r.insert_row(&[&[v as f64]]).unwrap();
        }
        assert_eq!(ring_values(&r), vec![2.0, 3.0, 4.0]);
        assert_eq!(r.len(), 3);

        let big = Batch::from_columns(
            vec![FieldSpec::new("x", 1)],
            vec![Matrix::from_vec(5, 1, vec![5.0, 6.0, 7.0, 8.0, 9.0]).unwrap()],
        )
        .unwrap();
        r.insert(&big).unwrap();
        assert_eq!(ring_values(&r), vec![7.0, 8.0, 9.0]);
    }

    #[test]
    fn ring_drain_oldest_first() {
        let mut r = scalar_ring(3);
        assert!(r.drain_all().is_empty());
        r.insert_row(&[&[1.0]]).unwrap();
        r.insert_row(&[&[2.0]]).unwrap();
        assert_eq!(r.drain_all().scalar("x").unwrap(), &[1.0, 2.0]);
        assert_eq!(r.len(), 0);
        for v in 0..5 {
            r.insert_row(&[&[v as f64]]).unwrap();
        }
        assert_eq!(r.drain_all().scalar("x").unwrap(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn ring_sample_single_and_insufficient() {
        let mut r = scalar_ring(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(r.sample(1, &mut rng).is_err());
        r.insert_row(&[&[7.0]]).unwrap();
        assert_eq!(r.sample(1, &mut rng).unwrap().scalar("x").unwrap(), &[7.0]);
        assert!(r.sample(2, &mut rng).is_err());
    }

    #[test]
    fn ring_sample_keeps_rows_aligned() {
        let mut r = RingBuffer::<f64>::new(16, &fields()).unwrap();
        for i in 0..40 {
            let v = i as f64;
            r.insert_row(&[&[v, -v], &[2.0 * v]]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = r.sample(16, &mut rng).unwrap();
        for i in 0..b.len() {
            let row = b.row(i);
            assert_eq!(row[0][1], -row[0][0]);
            assert_eq!(row[1][0], 2.0 * row[0][0]);
            assert!(row[0][0] >= 24.0);
        }
    }

    #[test]
    fn ring_sample_is_uniform() {
        let mut r = scalar_ring(10);
        for v in 0..13 {
            r.insert_row(&[&[v as f64]]).unwrap();
        }
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 10];
        for _ in 0..n / 10 {
            for &v in r.sample(10, &mut rng).unwrap().scalar("x").unwrap() {
                counts[v as usize - 3] += 1;
            }
        }
        let expect = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        // 9 degrees of freedom, 99.9th percentile is 27.9
        assert!(chi2 < 27.9, "chi2 {chi2}");
        for &c in &counts {
            assert!((c as f64 - expect).abs() / expect < 0.02);
        }
    }

    #[test]
    fn drain_env_prefix_keeps_remainder() {
        let f = [FieldSpec::new("x", 1)];
        let mut s = StagingBuffer::<f64>::new(1, &f).unwrap();
        for v in 0..5 {
            s.store_ordered(0, &[&[v as f64]]).unwrap();
        }
        let head = s.drain_env_prefix(0, 3).unwrap();
        assert_eq!(head.scalar("x").unwrap(), &[0.0, 1.0, 2.0]);
        assert_eq!(s.env_field(0, "x").unwrap(), &[3.0, 4.0]);
        assert!(s.drain_env_prefix(0, 3).is_err());
    }

    proptest! {
        #[test]
        fn collect_matches_list_concatenation(lens in prop::collection::vec(0usize..6, 1..5)) {
            let f = [FieldSpec::new("x", 1)];
            let mut s = StagingBuffer::<f64>::new(lens.len(), &f).unwrap();
            let mut oracle: Vec<Vec<f64>> = vec![Vec::new(); lens.len()];
            let mut counter = 0.0;
            // round-robin stores so envs interleave
            let max = lens.iter().copied().max().unwrap_or(0);
            for step in 0..max {
                for (env, &n) in lens.iter().enumerate() {
                    if step < n {
                        s.store_ordered(env, &[&[counter]]).unwrap();
                        oracle[env].push(counter);
                        counter += 1.0;
                    }
                }
            }
            let mut r = RingBuffer::new(64, &f).unwrap();
            let moved = s.collect(&mut r).unwrap();
            let expect: Vec<f64> = oracle.concat();
            prop_assert_eq!(moved, lens.iter().sum::<usize>());
            prop_assert_eq!(ring_values(&r), expect);
        }

        #[test]
        fn ring_count_bounded_like_deque(cap in 1usize..8, ops in prop::collection::vec(0usize..4, 0..60)) {
            let mut r = scalar_ring(cap);
            let mut o = DequeOracle::new(cap);
            for (i, &burst) in ops.iter().enumerate() {
                for j in 0..burst {
                    let v = (i * 10 + j) as f64;
                    r.insert_row(&[&[v]]).unwrap();
                    o.push(vec![vec![v]]);
                }
                prop_assert!(r.len() <= cap);
                prop_assert_eq!(r.len(), o.rows.len());
            }
            let expect: Vec<f64> = o.drain().into_iter().map(|row| row[0][0]).collect();
            prop_assert_eq!(r.drain_all().scalar("x").unwrap().to_vec(), expect);
        }
    }
}
