use rand::Rng;

use super::{Result, SacError};

/// One transition. `done` marks the last step of an episode, after which
/// nothing is bootstrapped.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub z_next: Vec<f64>,
    pub done: bool,
}

/// Column-major view of sampled transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub z_next: Vec<f64>,
    /// 1 for terminal transitions.
    pub done: Vec<f64>,
}

impl Batch {
    pub fn from_experiences<'a>(items: impl IntoIterator<Item = &'a Experience>) -> Self {
        let mut b = Batch::default();
        for e in items {
            b.len += 1;
            b.z.extend_from_slice(&e.z);
            b.a.extend_from_slice(&e.a);
            b.r.push(e.r);
            b.z_next.extend_from_slice(&e.z_next);
            b.done.push(if e.done { 1.0 } else { 0.0 });
        }
        b
    }
}

/// FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, e: Experience) -> Result<()> {
        let finite = e.r.is_finite()
            && e.z
                .iter()
                .chain(&e.a)
                .chain(&e.z_next)
                .all(|v| v.is_finite());
        if !finite {
            return Err(SacError::Usage("experience holds non-finite values".into()));
        }
        if e.a.iter().any(|v| v.abs() > 1.0) {
            return Err(SacError::Usage("action outside [-1, 1]".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
        Ok(())
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.items.len() < n || n == 0 {
            return Err(SacError::Usage(format!(
                "cannot draw {n} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(Batch::from_experiences(
            (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]),
        ))
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(&self.items[..split])
    }
}
