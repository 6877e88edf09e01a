use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::optim::ParamTensor;
use crate::tensor::{Real, Tensor};

use super::graph::{Graph, GraphBuilder, SlotId};

/// Every network variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchId {
    SingleShallow,
    SingleMedian,
    SingleDeep,
    SingleDeepFingerOnly,
    FusionEnhance,
    FusionEarly,
    FusionLate,
    FusionSlow,
    FusionResult,
}

impl ArchId {
    pub const ALL: [ArchId; 9] = [
        ArchId::SingleShallow,
        ArchId::SingleMedian,
        ArchId::SingleDeep,
        ArchId::SingleDeepFingerOnly,
        ArchId::FusionEnhance,
        ArchId::FusionEarly,
        ArchId::FusionLate,
        ArchId::FusionSlow,
        ArchId::FusionResult,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchId::SingleShallow => "single-shallow",
            ArchId::SingleMedian => "single-median",
            ArchId::SingleDeep => "single-deep",
            ArchId::SingleDeepFingerOnly => "single-deep-fingeronly",
            ArchId::FusionEnhance => "fusion-enhance",
            ArchId::FusionEarly => "fusion-early",
            ArchId::FusionLate => "fusion-late",
            ArchId::FusionSlow => "fusion-slow",
            ArchId::FusionResult => "fusion-result",
        }
    }

    /// Whether the network consumes the edge stream.
    pub fn uses_edge(&self) -> bool {
        matches!(
            self,
            ArchId::FusionEnhance
                | ArchId::FusionEarly
                | ArchId::FusionLate
                | ArchId::FusionSlow
                | ArchId::FusionResult
        )
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownArch(s.to_owned()))
    }
}

/// Graph input streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Depth,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Regress the palm in addition to the five fingertips.
    pub include_palm: bool,
    /// Square input side in pixels.
    pub input_size: usize,
    /// Tie the shared trunk weights of fusion-slow and fusion-late.
    pub tied: bool,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            include_palm: true,
            input_size: 96,
            tied: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Conv(&'static str, usize, usize, usize),
    Pool(&'static str),
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Conv(n, ..) | Stage::Pool(n) => n,
        }
    }
}

const DEEP: [Stage; 16] = [
    Stage::Conv("C1", 24, 5, 1),
    Stage::Pool("P1"),
    Stage::Conv("C2", 24, 3, 1),
    Stage::Conv("C3", 24, 3, 1),
    Stage::Conv("C4", 24, 3, 1),
    Stage::Conv("C5", 24, 3, 1),
    Stage::Pool("P2"),
    Stage::Conv("C6", 32, 3, 1),
    Stage::Conv("C7", 32, 3, 1),
    Stage::Conv("C8", 48, 3, 1),
    Stage::Conv("C9", 48, 3, 1),
    Stage::Conv("C10", 48, 3, 1),
    Stage::Pool("P3"),
    Stage::Conv("C11", 96, 3, 1),
    Stage::Conv("C12", 128, 3, 1),
    Stage::Pool("P4"),
];

#[derive(Clone, Copy)]
enum Depth {
    Shallow,
    Median,
    Deep,
}

fn stages(depth: Depth) -> Vec<Stage> {
    let dropped: &[&str] = match depth {
        Depth::Deep => &[],
        Depth::Median => &["C5", "C10", "C12"],
        Depth::Shallow => &["C5", "C10", "C12", "C11", "P4"],
    };
    DEEP.iter()
        .filter(|s| !dropped.contains(&s.name()))
        .map(|&s| match (depth, s) {
            (Depth::Shallow, Stage::Conv("C8", d, f, _)) => Stage::Conv("C8", d, f, 2),
            _ => s,
        })
        .collect()
}

const HEAD_UNITS: usize = 1024;

fn add_stages<T: Real>(
    b: &mut GraphBuilder<T>,
    mut x: SlotId,
    stages: &[Stage],
    prefix: &str,
    tie_prefix: Option<&str>,
) -> Result<SlotId> {
    for stage in stages {
        let name = format!("{prefix}{}", stage.name());
        x = match *stage {
            Stage::Conv(short, d, f, stride) => {
                let spec = LayerSpec::conv(d, f, stride);
                let c = match tie_prefix {
                    Some(tp) => b.layer_tied(&name, spec, &[x], &format!("{tp}{short}"))?,
                    None => b.layer(&name, spec, &[x])?,
                };
                b.layer(&format!("{name}/relu"), LayerSpec::Relu, &[c])?
            }
            Stage::Pool(_) => b.layer(&name, LayerSpec::MaxPool, &[x])?,
        };
    }
    Ok(x)
}

fn add_head<T: Real>(
    b: &mut GraphBuilder<T>,
    mut x: SlotId,
    prefix: &str,
    out_dim: usize,
    flatten: bool,
) -> Result<SlotId> {
    if flatten {
        x = b.layer(&format!("{prefix}flatten"), LayerSpec::Flatten, &[x])?;
    }
    for fc in ["FC1", "FC2"] {
        let name = format!("{prefix}{fc}");
        let h = b.layer(
            &name,
            LayerSpec::Fc {
                out_units: HEAD_UNITS,
            },
            &[x],
        )?;
        x = b.layer(&format!("{name}/relu"), LayerSpec::Relu, &[h])?;
    }
    b.layer(
        &format!("{prefix}FC3"),
        LayerSpec::Fc { out_units: out_dim },
        &[x],
    )
}

/// A built network variant together with its input wiring.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f32> {
    arch: ArchId,
    options: BuildOptions,
    streams: Vec<Stream>,
    graph: Graph<T>,
}

/// Builds `arch` with freshly initialized parameters.
pub fn build<T: Real>(arch: ArchId, options: &BuildOptions) -> Result<Network<T>> {
    let mut options = *options;
    if arch == ArchId::SingleDeepFingerOnly {
        options.include_palm = false;
    }
    let out_dim = if options.include_palm { 18 } else { 15 };
    let s = options.input_size;
    let mut b = GraphBuilder::<T>::new(options.seed);
    let deep = stages(Depth::Deep);

    let (streams, out) = match arch {
        ArchId::SingleShallow
        | ArchId::SingleMedian
        | ArchId::SingleDeep
        | ArchId::SingleDeepFingerOnly => {
            let depth = match arch {
                ArchId::SingleShallow => Depth::Shallow,
                ArchId::SingleMedian => Depth::Median,
                _ => Depth::Deep,
            };
            let x = b.input("depth", &[1, s, s]);
            let t = add_stages(&mut b, x, &stages(depth), "", None)?;
            (vec![Stream::Depth], add_head(&mut b, t, "", out_dim, true)?)
        }
        ArchId::FusionEnhance => {
            let d = b.input("depth", &[1, s, s]);
            let e = b.input("edge", &[1, s, s]);
            let x = b.layer(
                "enhance",
                LayerSpec::Blend {
                    alpha: 0.8,
                    beta: 0.2,
                },
                &[d, e],
            )?;
            let t = add_stages(&mut b, x, &deep, "", None)?;
            (
                vec![Stream::Depth, Stream::Edge],
                add_head(&mut b, t, "", out_dim, true)?,
            )
        }
        ArchId::FusionEarly => {
            let d = b.input("depth", &[1, s, s]);
            let e = b.input("edge", &[1, s, s]);
            let x = b.layer("stack", LayerSpec::ConcatChannels, &[d, e])?;
            let t = add_stages(&mut b, x, &deep, "", None)?;
            (
                vec![Stream::Depth, Stream::Edge],
                add_head(&mut b, t, "", out_dim, true)?,
            )
        }
        ArchId::FusionSlow => {
            let split = deep.iter().position(|s| s.name() == "P2").expect("P2") + 1;
            let d = b.input("depth", &[1, s, s]);
            let e = b.input("edge", &[1, s, s]);
            let td = add_stages(&mut b, d, &deep[..split], "depth/", None)?;
            let tie = options.tied.then_some("depth/");
            let te = add_stages(&mut b, e, &deep[..split], "edge/", tie)?;
            let m = b.layer("merge", LayerSpec::ConcatChannels, &[td, te])?;
            let t = add_stages(&mut b, m, &deep[split..], "", None)?;
            (
                vec![Stream::Depth, Stream::Edge],
                add_head(&mut b, t, "", out_dim, true)?,
            )
        }
        ArchId::FusionLate => {
            let d = b.input("depth", &[1, s, s]);
            let e = b.input("edge", &[1, s, s]);
            let td = add_stages(&mut b, d, &deep, "depth/", None)?;
            let tie = options.tied.then_some("depth/");
            let te = add_stages(&mut b, e, &deep, "edge/", tie)?;
            let fd = b.layer("depth/flatten", LayerSpec::Flatten, &[td])?;
            let fe = b.layer("edge/flatten", LayerSpec::Flatten, &[te])?;
            let m = b.layer("merge", LayerSpec::ConcatChannels, &[fd, fe])?;
            (
                vec![Stream::Depth, Stream::Edge],
                add_head(&mut b, m, "", out_dim, false)?,
            )
        }
        ArchId::FusionResult => {
            let d = b.input("depth", &[1, s, s]);
            let e = b.input("edge", &[1, s, s]);
            let td = add_stages(&mut b, d, &deep, "depth/", None)?;
            let od = add_head(&mut b, td, "depth/", out_dim, true)?;
            let te = add_stages(&mut b, e, &deep, "edge/", None)?;
            let oe = add_head(&mut b, te, "edge/", out_dim, true)?;
            let avg = b.layer(
                "average",
                LayerSpec::Blend {
                    alpha: 0.5,
                    beta: 0.5,
                },
                &[od, oe],
            )?;
            (vec![Stream::Depth, Stream::Edge], avg)
        }
    };

    Ok(Network {
        arch,
        options,
        streams,
        graph: b.finish(out),
    })
}

impl<T: Real> Network<T> {
    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn options(&self) -> &BuildOptions {
        &self.options
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn uses_edge(&self) -> bool {
        self.streams.contains(&Stream::Edge)
    }

    pub fn out_dim(&self) -> usize {
        self.graph.output_shape()[0]
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }

    pub fn params(&self) -> &[ParamTensor<T>] {
        self.graph.params()
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor<T>] {
        self.graph.params_mut()
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    /// Runs the network on `[N,1,S,S]` depth (and edge) batches and returns
    /// `[N, out_dim]` normalized joint coordinates.
    pub fn forward(&mut self, depth: &Tensor<T>, edge: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut inputs = Vec::with_capacity(self.streams.len());
        for stream in &self.streams {
            inputs.push(match stream {
                Stream::Depth => depth,
                Stream::Edge => edge.ok_or_else(|| Error::MissingStream {
                    arch: self.arch.to_string(),
                    stream: "edge",
                })?,
            });
        }
        self.graph.forward(&inputs)
    }

    /// Populates parameter gradients; tied parameters receive the sum of
    /// their per-stream contributions.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        self.graph.backward(grad_output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in ArchId::ALL {
            assert_eq!(a.as_str().parse::<ArchId>().unwrap(), a);
        }
        assert!(matches!(
            "fusion-fast".parse::<ArchId>(),
            Err(Error::UnknownArch(_))
        ));
    }

    #[test]
    fn variant_layer_sequences() {
        let names = |d| {
            stages(d)
                .iter()
                .map(|s| s.name())
                .collect::<Vec<_>>()
                .join("-")
        };
        assert_eq!(
            names(Depth::Median),
            "C1-P1-C2-C3-C4-P2-C6-C7-C8-C9-P3-C11-P4"
        );
        assert_eq!(names(Depth::Shallow), "C1-P1-C2-C3-C4-P2-C6-C7-C8-C9-P3");
        let c8 = stages(Depth::Shallow)
            .into_iter()
            .find(|s| s.name() == "C8")
            .unwrap();
        assert!(matches!(c8, Stage::Conv(_, 48, 3, 2)));
    }

    #[test]
    fn fingeronly_forces_fifteen_outputs() {
        let net = build::<f32>(ArchId::SingleDeepFingerOnly, &BuildOptions::default()).unwrap();
        assert_eq!(net.out_dim(), 15);
        assert!(!net.options().include_palm);
    }

    #[test]
    fn edge_required_for_fusion() {
        let opts = BuildOptions {
            input_size: 16,
            ..Default::default()
        };
        let mut net = build::<f32>(ArchId::FusionEarly, &opts).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(matches!(
            net.forward(&x, None),
            Err(Error::MissingStream { .. })
        ));
        assert!(net.forward(&x, Some(&x)).is_ok());
    }
}
