use std::fmt;

use super::network::Network;

/// One line of the architecture overview.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

impl SummaryRow {
    /// `(256, 256, 32)` or `(12800)`.
    pub fn shape_text(&self) -> String {
        let dims: Vec<String> = self.output_shape.iter().map(usize::to_string).collect();
        format!("({})", dims.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl Summary {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Rows for every layer except activations, with parameter totals. Every
/// parameter is trainable.
pub fn summarize(net: &Network) -> Summary {
    let mut shape = net.input_shape().to_vec();
    let mut rows = Vec::new();
    for l in net.layers() {
        let kind = l.layer.kind();
        shape = kind
            .output_shape(&shape)
            .expect("network shapes were validated at construction");
        if kind.in_summary() {
            rows.push(SummaryRow {
                name: l.name.clone(),
                output_shape: shape.clone(),
                params: l.layer.param_count(),
            });
        }
    }
    let total = rows.iter().map(|r| r.params).sum();
    Summary {
        rows,
        total,
        trainable: total,
        non_trainable: 0,
    }
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "{:<name_w$}  {:<18}  {:>12}",
            "Layer", "Output Shape", "Param #"
        )?;
        writeln!(f, "{}", "-".repeat(name_w + 34))?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<name_w$}  {:<18}  {:>12}",
                r.name,
                r.shape_text(),
                group_thousands(r.params)
            )?;
        }
        writeln!(f, "{}", "-".repeat(name_w + 34))?;
        writeln!(f, "Total params: {}", group_thousands(self.total))?;
        writeln!(f, "Trainable params: {}", group_thousands(self.trainable))?;
        write!(
            f,
            "Non-trainable params: {}",
            group_thousands(self.non_trainable)
        )
    }
}
