//! CNN layer tables, im2col lowering and tiling onto the array.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::Mode;
use crate::engine::tile_cycles;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("layer `{name}`: {msg}")]
    InvalidShape { name: String, msg: String },
    #[error("layer table: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown network `{0}` (expected mobilenet or resnet50)")]
    UnknownNetwork(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    /// One filter per input channel; `out_ch` must be a multiple of `in_ch`
    /// (the channel multiplier is `out_ch / in_ch`).
    DepthwiseConv,
    /// Fully connected; only `in_ch` and `out_ch` are used.
    FC,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub in_ch: u64,
    pub out_ch: u64,
    #[serde(rename = "kh")]
    pub kernel_h: u64,
    #[serde(rename = "kw")]
    pub kernel_w: u64,
    pub in_h: u64,
    pub in_w: u64,
    pub stride: u64,
    pub pad: u64,
}

/// A batch of `groups` independent `M x K` by `K x N` products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmDims {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub groups: u64,
}

impl GemmDims {
    pub fn macs(&self) -> u64 {
        self.m * self.k * self.n * self.groups
    }
}

impl LayerShape {
    fn invalid(&self, msg: impl Into<String>) -> WorkloadError {
        WorkloadError::InvalidShape { name: self.name.clone(), msg: msg.into() }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let dims = [
            ("in_ch", self.in_ch),
            ("out_ch", self.out_ch),
            ("kh", self.kernel_h),
            ("kw", self.kernel_w),
            ("in_h", self.in_h),
            ("in_w", self.in_w),
            ("stride", self.stride),
        ];
        if let Some((field, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(self.invalid(format!("{field} must be >= 1")));
        }
        if self.kind == LayerKind::DepthwiseConv && !self.out_ch.is_multiple_of(self.in_ch) {
            return Err(self.invalid(format!("depthwise out_ch {} is not a multiple of in_ch {}", self.out_ch, self.in_ch)));
        }
        if self.kind != LayerKind::FC
            && (self.in_h + 2 * self.pad < self.kernel_h || self.in_w + 2 * self.pad < self.kernel_w)
        {
            return Err(self.invalid("kernel larger than padded input"));
        }
        Ok(())
    }

    pub fn output_hw(&self) -> (u64, u64) {
        let out = |i: u64, k: u64| (i + 2 * self.pad - k) / self.stride + 1;
        (out(self.in_h, self.kernel_h), out(self.in_w, self.kernel_w))
    }
}

pub fn to_gemm(layer: &LayerShape) -> Result<GemmDims, WorkloadError> {
    layer.validate()?;
    let (oh, ow) = layer.output_hw();
    let g = match layer.kind {
        LayerKind::Conv => GemmDims {
            m: oh * ow,
            k: layer.in_ch * layer.kernel_h * layer.kernel_w,
            n: layer.out_ch,
            groups: 1,
        },
        LayerKind::DepthwiseConv => GemmDims {
            m: oh * ow,
            k: layer.kernel_h * layer.kernel_w,
            n: layer.out_ch / layer.in_ch,
            groups: layer.in_ch,
        },
        LayerKind::FC => GemmDims { m: 1, k: layer.in_ch, n: layer.out_ch, groups: 1 },
    };
    Ok(g)
}

/// Tiles sharing one shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileClass {
    pub rows_used: u64,
    pub cols_used: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub gemm: GemmDims,
    pub rows: usize,
    pub cols: usize,
    pub k_tiles: u64,
    pub n_tiles: u64,
    pub classes: Vec<TileClass>,
}

impl TilePlan {
    pub fn tile_count(&self) -> u64 {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// MACs the tiles perform; equals `gemm.macs()`.
    pub fn tiled_macs(&self) -> u64 {
        self.classes.iter().map(|c| c.count * c.rows_used * c.cols_used * self.gemm.m).sum()
    }

    /// Fraction of PE-slots doing useful work while streaming.
    pub fn utilization(&self) -> f64 {
        let slots = self.tile_count() * self.rows as u64 * self.cols as u64 * self.gemm.m;
        if slots == 0 {
            0.0
        } else {
            self.tiled_macs() as f64 / slots as f64
        }
    }

    /// Layer cycles: every tile preloads and streams all `M` vectors; partial
    /// sums of successive K-tiles are added at the South edge.
    pub fn cycles(&self, mode: Mode) -> u64 {
        self.classes
            .iter()
            .map(|c| c.count * tile_cycles(self.rows, c.cols_used as usize, self.gemm.m as usize, mode))
            .sum()
    }
}

pub fn tile_plan(g: GemmDims, rows: usize, cols: usize) -> TilePlan {
    let split = |total: u64, size: usize| -> (u64, Vec<(u64, u64)>) {
        let size = size as u64;
        let (full, rem) = (total / size, total % size);
        let mut parts = Vec::new();
        if full > 0 {
            parts.push((size, full));
        }
        if rem > 0 {
            parts.push((rem, 1));
        }
        (full + u64::from(rem > 0), parts)
    };
    let (k_tiles, ks) = split(g.k, rows);
    let (n_tiles, ns) = split(g.n, cols);
    let mut classes = Vec::new();
    for &(k, kc) in &ks {
        for &(n, nc) in &ns {
            classes.push(TileClass { rows_used: k, cols_used: n, count: kc * nc * g.groups });
        }
    }
    TilePlan { gemm: g, rows, cols, k_tiles, n_tiles, classes }
}

pub fn read_layers(reader: impl Read) -> Result<Vec<LayerShape>, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let layers = rdr.deserialize().collect::<Result<Vec<LayerShape>, _>>()?;
    for l in &layers {
        l.validate()?;
    }
    Ok(layers)
}

pub fn write_layers(writer: impl Write, layers: &[LayerShape]) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(writer);
    for l in layers {
        w.serialize(l)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    MobileNet,
    ResNet50,
}

impl Network {
    pub fn layers(self) -> Vec<LayerShape> {
        let text = match self {
            Network::MobileNet => include_str!("../data/mobilenet_v1.csv"),
            Network::ResNet50 => include_str!("../data/resnet50.csv"),
        };
        read_layers(text.as_bytes()).expect("shipped layer table parses")
    }
}

impl FromStr for Network {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mobilenet" | "mobilenet_v1" | "mobilenet-v1" => Ok(Network::MobileNet),
            "resnet50" | "resnet-50" | "resnet" => Ok(Network::ResNet50),
            _ => Err(WorkloadError::UnknownNetwork(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(kind: LayerKind, in_ch: u64, out_ch: u64, k: u64, hw: u64, stride: u64, pad: u64) -> LayerShape {
        LayerShape {
            name: "t".into(),
            kind,
            in_ch,
            out_ch,
            kernel_h: k,
            kernel_w: k,
            in_h: hw,
            in_w: hw,
            stride,
            pad,
        }
    }

    #[test]
    fn gemm_examples() {
        let g = to_gemm(&layer(LayerKind::Conv, 3, 32, 3, 224, 2, 1)).unwrap();
        assert_eq!(g, GemmDims { m: 112 * 112, k: 27, n: 32, groups: 1 });
        let g = to_gemm(&layer(LayerKind::FC, 1024, 1000, 1, 1, 1, 0)).unwrap();
        assert_eq!(g, GemmDims { m: 1, k: 1024, n: 1000, groups: 1 });
        let g = to_gemm(&layer(LayerKind::Conv, 64, 256, 1, 56, 1, 0)).unwrap();
        assert_eq!((g.m, g.k), (56 * 56, 64));
        let g = to_gemm(&layer(LayerKind::DepthwiseConv, 32, 32, 3, 112, 1, 1)).unwrap();
        assert_eq!(g, GemmDims { m: 112 * 112, k: 9, n: 1, groups: 32 });
    }

    #[test]
    fn invalid_shapes() {
        assert!(to_gemm(&layer(LayerKind::Conv, 0, 32, 3, 224, 2, 1)).is_err());
        assert!(to_gemm(&layer(LayerKind::DepthwiseConv, 32, 48, 3, 8, 1, 1)).is_err());
        assert!(to_gemm(&layer(LayerKind::Conv, 3, 3, 7, 4, 1, 0)).is_err());
    }

    #[test]
    fn tiling() {
        let p = tile_plan(GemmDims { m: 8, k: 128, n: 128, groups: 1 }, 128, 128);
        assert_eq!(p.tile_count(), 1);
        assert_eq!(p.cycles(Mode::Baseline), 128 + 127 + 7 + (2 * 127 + 3));
        assert_eq!(p.cycles(Mode::Skewed), 128 + 127 + 7 + (127 + 3));
        let p = tile_plan(GemmDims { m: 8, k: 256, n: 128, groups: 1 }, 128, 128);
        assert_eq!((p.k_tiles, p.tile_count()), (2, 2));
        assert_eq!(p.cycles(Mode::Skewed), 2 * tile_cycles(128, 128, 8, Mode::Skewed));
        let p = tile_plan(GemmDims { m: 5, k: 10, n: 1, groups: 1 }, 128, 128);
        assert!((p.utilization() - 10.0 / (128.0 * 128.0)).abs() < 1e-12);
    }

    #[test]
    fn tiling_conserves_work() {
        for net in [Network::MobileNet, Network::ResNet50] {
            for l in net.layers() {
                let g = to_gemm(&l).unwrap();
                for (r, c) in [(128, 128), (7, 300), (1, 1)] {
                    let p = tile_plan(g, r, c);
                    assert_eq!(p.tiled_macs(), g.macs(), "{}", l.name);
                    assert_eq!(p.tile_count(), p.k_tiles * p.n_tiles * g.groups);
                }
            }
        }
    }

    #[test]
    fn shipped_tables() {
        let m = Network::MobileNet.layers();
        assert_eq!(m.len(), 28);
        let r = Network::ResNet50.layers();
        assert_eq!(r.len(), 54);
        // published totals: 569M and 4.09G multiply-adds
        let macs = |ls: &[LayerShape]| ls.iter().map(|l| to_gemm(l).unwrap().macs()).sum::<u64>();
        assert_eq!(macs(&m), 568_740_352);
        assert_eq!(macs(&r), 4_089_184_256);
    }

    #[test]
    fn table_round_trip() {
        let layers = Network::ResNet50.layers();
        let mut buf = Vec::new();
        write_layers(&mut buf, &layers).unwrap();
        assert_eq!(read_layers(buf.as_slice()).unwrap(), layers);
        assert!(String::from_utf8(buf).unwrap().starts_with("name,kind,in_ch,out_ch,kh,kw,in_h,in_w,stride,pad\n"));
    }
}
