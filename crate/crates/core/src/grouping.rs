//! Phrase candidates from density-based clustering of word boxes.

use serde::{Deserialize, Serialize};

use crate::doc::{reading_order, Document, Phrase, Word};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingConfig {
    /// Neighborhood radius as a multiple of the median word height.
    pub eps_scale: f64,
    /// Weight on vertical center offset in the word metric.
    pub vertical_penalty: f64,
    pub min_pts: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            eps_scale: 0.8,
            vertical_penalty: 3.0,
            min_pts: 1,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_scale > 0.0 && self.eps_scale.is_finite()) {
            return Err(Error::config("eps_scale must be positive"));
        }
        if !(self.vertical_penalty >= 1.0 && self.vertical_penalty.is_finite()) {
            return Err(Error::config("vertical_penalty must be at least 1"));
        }
        if self.min_pts != 1 {
            return Err(Error::config(
                "min_pts must be 1 so every word joins a phrase",
            ));
        }
        Ok(())
    }
}

/// Anisotropic distance: horizontal gap (0 when x-projections overlap)
/// combined with a penalized vertical center offset.
pub fn word_distance(a: &Word, b: &Word, vertical_penalty: f64) -> f64 {
    let (a, b) = (&a.bbox, &b.bbox);
    let gap = (b.x0 - a.x1).max(a.x0 - b.x1).max(0.0);
    let dy = (a.cy() - b.cy()).abs();
    gap.hypot(vertical_penalty * dy)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Cluster label per point; `None` is noise.
fn dbscan<D>(order: &[usize], n: usize, eps: f64, min_pts: usize, dist: D) -> Vec<Option<usize>>
where
    D: Fn(usize, usize) -> f64,
{
    let region = |p: usize| -> Vec<usize> {
        order
            .iter()
            .copied()
            .filter(|&q| dist(p, q) <= eps)
            .collect()
    };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for &p in order {
        if visited[p] {
            continue;
        }
        visited[p] = true;
        let neighbors = region(p);
        if neighbors.len() < min_pts {
            continue;
        }
        let c = next;
        next += 1;
        label[p] = Some(c);
        let mut queue = std::collections::VecDeque::from(neighbors);
        while let Some(q) = queue.pop_front() {
            if label[q].is_none() {
                label[q] = Some(c);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            let nq = region(q);
            if nq.len() >= min_pts {
                queue.extend(nq);
            }
        }
    }
    label
}

/// Groups the words of `doc` into phrases. Phrases are returned in reading
/// order of their first word, members in reading order.
pub fn group_words(doc: &Document, cfg: &GroupingConfig) -> Vec<Phrase> {
    let n = doc.words.len();
    if n == 0 {
        return Vec::new();
    }
    let order = reading_order(doc);
    let eps = cfg.eps_scale * median(doc.words.iter().map(|w| w.bbox.height()).collect());
    let labels = dbscan(&order, n, eps, cfg.min_pts, |a, b| {
        word_distance(&doc.words[a], &doc.words[b], cfg.vertical_penalty)
    });

    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut slot: Vec<Option<usize>> = vec![None; n];
    for &w in &order {
        // noise only arises when min_pts > 1; it becomes a singleton phrase
        let key = match labels[w] {
            Some(c) => c,
            None => n + w,
        };
        if key >= slot.len() {
            slot.resize(key + 1, None);
        }
        let idx = *slot[key].get_or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[idx].push(w);
    }
    members
        .into_iter()
        .map(|ids| Phrase::from_words(doc, ids).expect("cluster members are valid word ids"))
        .collect()
}

/// Phrases attached to the document, or freshly grouped ones.
pub fn phrases_of(doc: &Document, cfg: &GroupingConfig) -> Vec<Phrase> {
    match &doc.phrases {
        Some(p) => p.clone(),
        None => group_words(doc, cfg),
    }
}
