//! Undirected link graph with per-link reception error probability.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("link from node {0} to itself")]
    SelfLink(u32),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(u32, u32),
    #[error("duplicate node {0}")]
    DuplicateNode(u32),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("no link between {0} and {1}")]
    NoSuchLink(u32, u32),
    #[error("error probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: u32,
    pub b: u32,
    pub p_err: f64,
    pub enabled: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Topology {
    nodes: BTreeSet<u32>,
    links: BTreeMap<(u32, u32), Link>,
}

fn pair(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

fn check_probability(p: f64) -> Result<(), TopologyError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(TopologyError::InvalidProbability(p))
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: u32) -> Result<(), TopologyError> {
        if !self.nodes.insert(id) {
            return Err(TopologyError::DuplicateNode(id));
        }
        Ok(())
    }

    pub fn contains(&self, id: u32) -> bool {
        self.nodes.contains(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn add_link(&mut self, a: u32, b: u32, p_err: f64, enabled: bool) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLink(a));
        }
        for id in [a, b] {
            if !self.contains(id) {
                return Err(TopologyError::UnknownNode(id));
            }
        }
        check_probability(p_err)?;
        let key = pair(a, b);
        if self.links.contains_key(&key) {
            return Err(TopologyError::DuplicateLink(key.0, key.1));
        }
        self.links.insert(
            key,
            Link {
                a: key.0,
                b: key.1,
                p_err,
                enabled,
            },
        );
        Ok(())
    }

    /// Updates an existing link, or creates it when absent.
    pub fn upsert_link(
        &mut self,
        a: u32,
        b: u32,
        p_err: Option<f64>,
        enabled: Option<bool>,
    ) -> Result<Link, TopologyError> {
        if let Some(p) = p_err {
            check_probability(p)?;
        }
        let key = pair(a, b);
        match self.links.get_mut(&key) {
            Some(link) => {
                if let Some(p) = p_err {
                    link.p_err = p;
                }
                if let Some(e) = enabled {
                    link.enabled = e;
                }
                Ok(*link)
            }
            None => {
                self.add_link(a, b, p_err.unwrap_or(0.0), enabled.unwrap_or(true))?;
                Ok(self.links[&key])
            }
        }
    }

    pub fn link(&self, a: u32, b: u32) -> Option<&Link> {
        self.links.get(&pair(a, b))
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> + '_ {
        self.links.values()
    }

    /// Sets every link's error probability.
    pub fn set_all_p_err(&mut self, p: f64) -> Result<(), TopologyError> {
        check_probability(p)?;
        for link in self.links.values_mut() {
            link.p_err = p;
        }
        Ok(())
    }

    /// Neighbours over enabled links, in ascending ID order, with the link's
    /// error probability.
    pub fn neighbors(&self, id: u32) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = self
            .links
            .values()
            .filter(|l| l.enabled && (l.a == id || l.b == id))
            .map(|l| (if l.a == id { l.b } else { l.a }, l.p_err))
            .collect();
        out.sort_by_key(|(n, _)| *n);
        out
    }

    /// Hop distances from `origin` over enabled links.
    pub fn hop_distances(&self, origin: u32) -> BTreeMap<u32, usize> {
        let mut dist = BTreeMap::new();
        if !self.contains(origin) {
            return dist;
        }
        dist.insert(origin, 0);
        let mut queue = VecDeque::from([origin]);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            for (m, _) in self.neighbors(n) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                    e.insert(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        match self.nodes.iter().next() {
            None => true,
            Some(&first) => self.hop_distances(first).len() == self.nodes.len(),
        }
    }
}
