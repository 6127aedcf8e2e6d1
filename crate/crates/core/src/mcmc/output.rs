//! Chain CSV: one row per retained draw.
//!
//! Columns are `alpha0`, `alpha_<layer>`…, `gamma0`, `gamma_<layer>`…,
//! `beta_<species>`…, `omega_x`, `omega_y`, `t0` (as `YYYY-MM`), `theta`,
//! then `omega_x_j, omega_y_j, theta_j` for any further sources, and finally
//! `log_post`, `chain_id`, `iter`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::mcmc::run::ChainOutput;
use crate::mcmc::state::{scalar_names, ParameterState};
use crate::mcmc::updates::{AcceptanceStats, ProposalScales};
use crate::time::Month;

/// Parameter layout recovered from (or written to) a chain file header.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLayout {
    pub diffusion_layers: Vec<String>,
    pub growth_layers: Vec<String>,
    pub species: Vec<String>,
    pub n_sources: usize,
}

impl ChainLayout {
    pub fn columns(&self) -> Vec<String> {
        let mut c = scalar_names(
            &self.diffusion_layers,
            &self.growth_layers,
            &self.species,
            self.n_sources,
        );
        c.extend(["log_post", "chain_id", "iter"].map(String::from));
        c
    }

    fn from_header(header: &[&str]) -> Result<Self> {
        let mut layout = ChainLayout {
            diffusion_layers: Vec::new(),
            growth_layers: Vec::new(),
            species: Vec::new(),
            n_sources: 1,
        };
        for &h in header {
            if let Some(l) = h.strip_prefix("alpha_") {
                layout.diffusion_layers.push(l.to_string());
            } else if let Some(l) = h.strip_prefix("gamma_") {
                layout.growth_layers.push(l.to_string());
            } else if let Some(s) = h.strip_prefix("beta_") {
                layout.species.push(s.to_string());
            } else if let Some(j) = h.strip_prefix("theta_") {
                let j: usize = j
                    .parse()
                    .map_err(|_| Error::Config(format!("bad chain column {h}")))?;
                layout.n_sources = layout.n_sources.max(j);
            }
        }
        let expected = layout.columns();
        if expected
            .iter()
            .map(String::as_str)
            .ne(header.iter().copied())
        {
            return Err(Error::Config(format!(
                "chain header does not follow the expected column layout: {}",
                header.join(",")
            )));
        }
        Ok(layout)
    }
}

fn row_values(s: &ParameterState) -> Vec<String> {
    let mut v: Vec<String> = vec![s.alpha0.to_string()];
    v.extend(s.alpha.iter().map(f64::to_string));
    v.push(s.gamma0.to_string());
    v.extend(s.gamma.iter().map(f64::to_string));
    v.extend(s.beta.iter().map(f64::to_string));
    v.extend([
        s.omega[0].x.to_string(),
        s.omega[0].y.to_string(),
        s.t0.to_string(),
        s.theta[0].to_string(),
    ]);
    for j in 1..s.n_sources() {
        v.extend([
            s.omega[j].x.to_string(),
            s.omega[j].y.to_string(),
            s.theta[j].to_string(),
        ]);
    }
    v
}

pub fn write_chains(path: &Path, layout: &ChainLayout, chains: &[ChainOutput]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", layout.columns().join(",")).map_err(io)?;
    for c in chains {
        for ((d, lp), it) in c.draws.iter().zip(&c.log_post).zip(&c.iterations) {
            let mut row = row_values(d);
            row.extend([lp.to_string(), c.chain_id.to_string(), it.to_string()]);
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a chain file back into per-chain outputs. Acceptance statistics are
/// not stored in the file and come back empty.
pub fn read_chains(path: &Path) -> Result<(ChainLayout, Vec<ChainOutput>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty chain file".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split(',').collect();
    let layout = ChainLayout::from_header(&cols)?;
    let (na, ng, nb) = (
        layout.diffusion_layers.len(),
        layout.growth_layers.len(),
        layout.species.len(),
    );
    let mut chains: Vec<ChainOutput> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                cols.len(),
                f.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse::<f64>()
                .map_err(|_| bad(format!("non-numeric value {:?}", f[k])))
        };
        let mut k = 0;
        let mut take = |n: usize| {
            let r = k..k + n;
            k += n;
            r
        };
        let alpha0 = num(take(1).start)?;
        let alpha = take(na).map(num).collect::<Result<Vec<_>>>()?;
        let gamma0 = num(take(1).start)?;
        let gamma = take(ng).map(num).collect::<Result<Vec<_>>>()?;
        let beta = take(nb).map(num).collect::<Result<Vec<_>>>()?;
        let base = take(4).start;
        let mut omega = vec![Point::new(num(base)?, num(base + 1)?)];
        let t0: Month = f[base + 2].parse().map_err(|e: Error| bad(e.to_string()))?;
        let mut theta = vec![num(base + 3)?];
        for _ in 1..layout.n_sources {
            let b = take(3).start;
            omega.push(Point::new(num(b)?, num(b + 1)?));
            theta.push(num(b + 2)?);
        }
        let log_post = num(k)?;
        let chain_id: usize = f[k + 1].parse().map_err(|_| bad("bad chain_id".into()))?;
        let iter: usize = f[k + 2].parse().map_err(|_| bad("bad iter".into()))?;
        let idx = match chains.iter().position(|c| c.chain_id == chain_id) {
            Some(i) => i,
            None => {
                chains.push(ChainOutput {
                    chain_id,
                    draws: Vec::new(),
                    log_post: Vec::new(),
                    iterations: Vec::new(),
                    acceptance: AcceptanceStats::default(),
                    blowups: 0,
                    final_scales: ProposalScales::default(),
                });
                chains.len() - 1
            }
        };
        let c = &mut chains[idx];
        c.draws.push(ParameterState {
            alpha0,
            alpha,
            gamma0,
            gamma,
            beta,
            omega,
            t0,
            theta,
        });
        c.log_post.push(log_post);
        c.iterations.push(iter);
    }
    Ok((layout, chains))
}
