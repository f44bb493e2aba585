//! Binary gate format.
//!
//! ```text
//! "ECGT" | version u16 | kind u8 | body
//! 0 svm:      width u32, weights f64 * width, bias f64
//! 1 knn:      k u32, n u32, width u32, features f64 * (n*width), labels u8 * n
//! 2 forest:   tree_count u32, per tree: node_count u32, nodes...
//!             node: 0 leaf prob_normal f64 | 1 split feature u32, threshold f64, left u32, right u32
//! 3 constant: label u8, width u32
//! ```
//! Little-endian throughout; labels are 0 complex, 1 normal.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::gate::{GateLabel, GateModel, Knn, LinearSvm, Node, RandomForest, Tree};

pub const MAGIC: &[u8; 4] = b"ECGT";
pub const VERSION: u16 = 1;

fn label_byte(l: GateLabel) -> u8 {
    l as u8
}

pub fn gate_to_bytes(gate: &GateModel) -> Vec<u8> {
    let mut w = Vec::new();
    w.extend_from_slice(MAGIC);
    w.write_u16::<LittleEndian>(VERSION).unwrap();
    let f64s = |w: &mut Vec<u8>, vals: &[f64]| {
        for &v in vals {
            w.write_f64::<LittleEndian>(v).unwrap();
        }
    };
    match gate {
        GateModel::LinearSvm(m) => {
            w.push(0);
            w.write_u32::<LittleEndian>(m.weights.len() as u32).unwrap();
            f64s(&mut w, &m.weights);
            w.write_f64::<LittleEndian>(m.bias).unwrap();
        }
        GateModel::Knn(m) => {
            w.push(1);
            let width = m.features.first().map_or(0, Vec::len);
            for v in [m.k, m.features.len(), width] {
                w.write_u32::<LittleEndian>(v as u32).unwrap();
            }
            for f in &m.features {
                f64s(&mut w, f);
            }
            w.extend(m.labels.iter().map(|&l| label_byte(l)));
        }
        GateModel::RandomForest(m) => {
            w.push(2);
            w.write_u32::<LittleEndian>(m.trees.len() as u32).unwrap();
            for t in &m.trees {
                w.write_u32::<LittleEndian>(t.nodes.len() as u32).unwrap();
                for n in &t.nodes {
                    match *n {
                        Node::Leaf { prob_normal } => {
                            w.push(0);
                            w.write_f64::<LittleEndian>(prob_normal).unwrap();
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.push(1);
                            w.write_u32::<LittleEndian>(feature as u32).unwrap();
                            w.write_f64::<LittleEndian>(threshold).unwrap();
                            w.write_u32::<LittleEndian>(left as u32).unwrap();
                            w.write_u32::<LittleEndian>(right as u32).unwrap();
                        }
                    }
                }
            }
        }
        GateModel::Constant { label, width } => {
            w.push(3);
            w.push(label_byte(*label));
            w.write_u32::<LittleEndian>(*width as u32).unwrap();
        }
    }
    w
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn pos(&self) -> u64 {
        self.cur.position()
    }

    fn err(&self, what: &str) -> Error {
        Error::parse(self.pos(), format!("truncated gate: missing {what}"))
    }

    fn remaining(&self) -> u64 {
        self.cur.get_ref().len() as u64 - self.pos()
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.err(what))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        self.cur.read_u32::<LittleEndian>().map(|v| v as usize).map_err(|_| self.err(what))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(|_| self.err(what))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if (n as u64).saturating_mul(8) > self.remaining() {
            return Err(self.err(what));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn label(&mut self) -> Result<GateLabel> {
        let at = self.pos();
        match self.u8("label")? {
            0 => Ok(GateLabel::Complex),
            1 => Ok(GateLabel::Normal),
            v => Err(Error::parse(at, format!("bad gate label {v}"))),
        }
    }
}

pub fn gate_from_bytes(bytes: &[u8]) -> Result<GateModel> {
    let mut r = Reader { cur: Cursor::new(bytes) };
    let mut magic = [0u8; 4];
    r.cur.read_exact(&mut magic).map_err(|_| r.err("magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse(0, format!("bad gate magic {magic:?}")));
    }
    let version = r.cur.read_u16::<LittleEndian>().map_err(|_| r.err("version"))?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported gate version {version}")));
    }
    let kind_at = r.pos();
    let gate = match r.u8("kind")? {
        0 => {
            let width = r.u32("svm width")?;
            let weights = r.f64s(width, "svm weights")?;
            let bias = r.f64("svm bias")?;
            GateModel::LinearSvm(LinearSvm { weights, bias })
        }
        1 => {
            let k = r.u32("knn k")?;
            let n = r.u32("knn count")?;
            let width = r.u32("knn width")?;
            let mut features = Vec::new();
            for _ in 0..n {
                features.push(r.f64s(width, "knn features")?);
            }
            let labels = (0..n).map(|_| r.label()).collect::<Result<Vec<_>>>()?;
            GateModel::Knn(Knn { k, features, labels })
        }
        2 => {
            let count = r.u32("tree count")?;
            let mut trees = Vec::new();
            for _ in 0..count {
                let n = r.u32("node count")?;
                let mut nodes = Vec::new();
                for i in 0..n {
                    let at = r.pos();
                    let node = match r.u8("node tag")? {
                        0 => Node::Leaf {
                            prob_normal: r.f64("leaf probability")?,
                        },
                        1 => {
                            let feature = r.u32("split feature")?;
                            let threshold = r.f64("split threshold")?;
                            let left = r.u32("left child")?;
                            let right = r.u32("right child")?;
                            if left <= i || right <= i || left >= n || right >= n {
                                return Err(Error::parse(at, "split child index out of range"));
                            }
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            }
                        }
                        t => return Err(Error::parse(at, format!("unknown node tag {t}"))),
                    };
                    nodes.push(node);
                }
                if nodes.is_empty() {
                    return Err(Error::parse(r.pos(), "empty tree"));
                }
                trees.push(Tree { nodes });
            }
            GateModel::RandomForest(RandomForest { trees })
        }
        3 => {
            let label = r.label()?;
            let width = r.u32("width")?;
            GateModel::Constant { label, width }
        }
        t => return Err(Error::parse(kind_at, format!("unknown gate kind {t}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::parse(r.pos(), "trailing bytes after gate"));
    }
    Ok(gate)
}

pub fn save_gate(gate: &GateModel, path: &Path) -> Result<()> {
    std::fs::write(path, gate_to_bytes(gate))?;
    Ok(())
}

pub fn load_gate(path: &Path) -> Result<GateModel> {
    gate_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_each_kind() {
        let gates = [
            GateModel::LinearSvm(LinearSvm {
                weights: vec![0.5, -1.25],
                bias: 0.1,
            }),
            GateModel::Knn(Knn {
                k: 3,
                features: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
                labels: vec![GateLabel::Normal, GateLabel::Complex],
            }),
            GateModel::RandomForest(RandomForest {
                trees: vec![Tree {
                    nodes: vec![
                        Node::Split {
                            feature: 1,
                            threshold: 0.5,
                            left: 1,
                            right: 2,
                        },
                        Node::Leaf { prob_normal: 0.25 },
                        Node::Leaf { prob_normal: 1.0 },
                    ],
                }],
            }),
            GateModel::Constant {
                label: GateLabel::Complex,
                width: 10,
            },
        ];
        for g in gates {
            assert_eq!(gate_from_bytes(&gate_to_bytes(&g)).unwrap(), g);
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = gate_to_bytes(&GateModel::LinearSvm(LinearSvm {
            weights: vec![1.0; 4],
            bias: 0.0,
        }));
        assert!(matches!(gate_from_bytes(b"XXXX\x01\x00\x00"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(gate_from_bytes(&bytes[..20]), Err(Error::Parse { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(gate_from_bytes(&long), Err(Error::Parse { .. })));
    }
}
