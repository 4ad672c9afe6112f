//! Minimal training pilots per estimator.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverheadRow {
    pub estimator: &'static str,
    pub min_pilots: usize,
    /// False for methods listed for comparison only.
    pub runnable: bool,
}

/// Minimal pilots for `N` BS antennas and `M` RIS elements.
pub fn overhead_table(n_bs: usize, m_ris: usize) -> Vec<OverheadRow> {
    let row = |estimator, min_pilots, runnable| OverheadRow { estimator, min_pilots, runnable };
    vec![
        row("MF_AM", m_ris, true),
        row("MF_GD", m_ris, true),
        row("LS", m_ris * n_bs, true),
        row("LR", m_ris + n_bs, true),
        row("KBF", m_ris * n_bs, false),
    ]
}
