//! Parameter and multiply-accumulate reporting.
//!
//! The report is a plain list of layer rows produced by the model's tally
//! walk, wrapped with the resolution it was computed at and total/format
//! helpers. MACs count one multiply-add; the conventional FLOP figure is
//! twice that.

use tinyseg_core::blocks::LayerRow;
use tinyseg_core::error::Result;

use crate::net::SegModel;

pub struct AccountingReport {
    pub rows: Vec<LayerRow>,
    /// (height, width) the MAC column was computed at.
    pub resolution: (usize, usize),
}

impl AccountingReport {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_flops(&self) -> u64 {
        2 * self.total_macs()
    }

    /// Aligned text table with a trailing total line.
    pub fn text_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["total".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!(
            "{:name_w$}  {:>12}  {:>16}\n",
            "layer", "params", "macs"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:name_w$}  {:>12}  {:>16}\n",
                r.name, r.params, r.macs
            ));
        }
        out.push_str(&format!(
            "{:name_w$}  {:>12}  {:>16}\n",
            "total",
            self.total_params(),
            self.total_macs()
        ));
        out
    }

    /// `layer,params,macs` rows plus a total row.
    pub fn csv(&self) -> String {
        let mut out = String::from("layer,params,macs\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.name, r.params, r.macs));
        }
        out.push_str(&format!(
            "total,{},{}\n",
            self.total_params(),
            self.total_macs()
        ));
        out
    }
}

/// Walks the model's layers at the given resolution.
pub fn count(net: &SegModel, resolution: (usize, usize)) -> Result<AccountingReport> {
    let tally = net.tally(resolution.0, resolution.1)?;
    Ok(AccountingReport {
        rows: tally.rows,
        resolution,
    })
}
