use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{EdgeTypeId, NodeTypeId, TypeRegistry};

const MAGIC: &[u8; 4] = b"HMRP";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Activation::Elu,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return Err(Error::Format(format!("unknown activation code {c}"))),
        })
    }
}

/// One input branch of a node type: its own previous-layer rows, or the
/// aggregated rows of a neighbor type over one relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    SelfLoop,
    Relation { relation: EdgeTypeId, source: NodeTypeId },
}

/// Branches feeding each node type: `SelfLoop` first, then one per
/// relation touching the type, in declaration order.
pub fn channel_layout(registry: &TypeRegistry) -> Vec<Vec<Channel>> {
    (0..registry.num_node_types())
        .map(|i| {
            let t = NodeTypeId(i as u16);
            let mut ch = vec![Channel::SelfLoop];
            for (r, decl) in registry.relations() {
                if let Some(source) = decl.other_end(t) {
                    ch.push(Channel::Relation { relation: r, source });
                }
            }
            ch
        })
        .collect()
}

/// Weights of the relation-typed convolution, shared by every level.
///
/// Every (layer, node type, channel) owns a `d x d` matrix followed by a
/// length-`d` attention vector, all packed into one flat buffer in
/// layer, type, channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinerParams {
    d: usize,
    layers: usize,
    activation: Activation,
    linear_output: bool,
    registry: TypeRegistry,
    layout: Vec<Vec<Channel>>,
    // first block index of each type within a layer
    type_block: Vec<usize>,
    blocks_per_layer: usize,
    data: Vec<f64>,
}

impl RefinerParams {
    pub fn zeros(
        registry: &TypeRegistry,
        d: usize,
        layers: usize,
        activation: Activation,
        linear_output: bool,
    ) -> Self {
        let layout = channel_layout(registry);
        let mut type_block = Vec::with_capacity(layout.len());
        let mut acc = 0;
        for ch in &layout {
            type_block.push(acc);
            acc += ch.len();
        }
        RefinerParams {
            d,
            layers,
            activation,
            linear_output,
            registry: registry.clone(),
            layout,
            type_block,
            blocks_per_layer: acc,
            data: vec![0.0; layers * acc * (d * d + d)],
        }
    }

    /// Every matrix the identity, every attention vector zero.
    pub fn identity(
        registry: &TypeRegistry,
        d: usize,
        layers: usize,
        activation: Activation,
        linear_output: bool,
    ) -> Self {
        let mut p = Self::zeros(registry, d, layers, activation, linear_output);
        for b in 0..layers * p.blocks_per_layer {
            let off = b * p.block_len();
            for k in 0..d {
                p.data[off + k * d + k] = 1.0;
            }
        }
        p
    }

    /// Identity plus Gaussian noise of standard deviation `scale` on every entry.
    pub fn perturbed_identity(
        registry: &TypeRegistry,
        d: usize,
        layers: usize,
        activation: Activation,
        linear_output: bool,
        scale: f64,
        seed: u64,
    ) -> Self {
        let mut p = Self::identity(registry, d, layers, activation, linear_output);
        if scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, scale).expect("positive scale");
            for x in p.data.iter_mut() {
                *x += normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn linear_output(&self) -> bool {
        self.linear_output
    }

    pub fn registry(&self) -> &TypeRegistry {
        &self.registry
    }

    pub fn channels(&self, t: NodeTypeId) -> &[Channel] {
        &self.layout[t.index()]
    }

    pub fn layout(&self) -> &[Vec<Channel>] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn block_len(&self) -> usize {
        self.d * self.d + self.d
    }

    /// Offset of the (layer, type, channel) block in the flat buffer.
    pub fn offset(&self, layer: usize, t: NodeTypeId, channel: usize) -> usize {
        debug_assert!(channel < self.layout[t.index()].len());
        (layer * self.blocks_per_layer + self.type_block[t.index()] + channel) * self.block_len()
    }

    pub fn w(&self, layer: usize, t: NodeTypeId, channel: usize) -> ArrayView2<'_, f64> {
        let o = self.offset(layer, t, channel);
        ArrayView2::from_shape((self.d, self.d), &self.data[o..o + self.d * self.d]).unwrap()
    }

    pub fn q(&self, layer: usize, t: NodeTypeId, channel: usize) -> ArrayView1<'_, f64> {
        let o = self.offset(layer, t, channel) + self.d * self.d;
        ArrayView1::from(&self.data[o..o + self.d])
    }

    pub fn w_mut(&mut self, layer: usize, t: NodeTypeId, channel: usize) -> ArrayViewMut2<'_, f64> {
        let o = self.offset(layer, t, channel);
        let d = self.d;
        ArrayViewMut2::from_shape((d, d), &mut self.data[o..o + d * d]).unwrap()
    }

    pub fn q_mut(&mut self, layer: usize, t: NodeTypeId, channel: usize) -> ArrayViewMut1<'_, f64> {
        let o = self.offset(layer, t, channel) + self.d * self.d;
        let d = self.d;
        ArrayViewMut1::from(&mut self.data[o..o + d])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        fn name(w: &mut impl Write, s: &str) -> std::io::Result<()> {
            w.write_u32::<LittleEndian>(s.len() as u32)?;
            w.write_all(s.as_bytes())
        }
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.layers as u32)?;
        w.write_u32::<LittleEndian>(self.d as u32)?;
        w.write_u8(self.activation.code())?;
        w.write_u8(self.linear_output as u8)?;
        w.write_u32::<LittleEndian>(self.registry.num_node_types() as u32)?;
        for t in self.registry.node_type_names() {
            name(w, t)?;
        }
        w.write_u32::<LittleEndian>(self.registry.num_relations() as u32)?;
        for (_, r) in self.registry.relations() {
            name(w, &r.name)?;
            w.write_u16::<LittleEndian>(r.source.0)?;
            w.write_u16::<LittleEndian>(r.target.0)?;
        }
        for &x in &self.data {
            w.write_f64::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let trunc = |_| Error::Format("truncated refiner parameter file".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an HMRP parameter file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HMRP version {version}")));
        }
        let layers = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let d = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let activation = Activation::from_code(r.read_u8().map_err(trunc)?)?;
        let linear_output = r.read_u8().map_err(trunc)? != 0;
        let read_name = |r: &mut dyn Read| -> Result<String> {
            let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            if len > 1 << 20 {
                return Err(Error::Format("type name too long".into()));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(trunc)?;
            String::from_utf8(buf).map_err(|_| Error::Format("type name is not UTF-8".into()))
        };
        let mut registry = TypeRegistry::new();
        let nt = r.read_u32::<LittleEndian>().map_err(trunc)?;
        for _ in 0..nt {
            let n = read_name(r)?;
            registry.add_node_type(&n).map_err(|e| Error::Format(e.to_string()))?;
        }
        let nr = r.read_u32::<LittleEndian>().map_err(trunc)?;
        for _ in 0..nr {
            let n = read_name(r)?;
            let s = r.read_u16::<LittleEndian>().map_err(trunc)? as usize;
            let t = r.read_u16::<LittleEndian>().map_err(trunc)? as usize;
            let names = registry.node_type_names().to_vec();
            let (s, t) = match (names.get(s), names.get(t)) {
                (Some(s), Some(t)) => (s.clone(), t.clone()),
                _ => return Err(Error::Format("relation references an unknown type".into())),
            };
            registry
                .add_relation(&n, &s, &t)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        let mut p = Self::zeros(&registry, d, layers, activation, linear_output);
        r.read_f64_into::<LittleEndian>(&mut p.data).map_err(trunc)?;
        if !p.is_finite() {
            return Err(Error::Format("parameter file holds non-finite values".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut std::io::BufReader::new(f))
    }

    /// Fails unless the parameters were built for this type registry.
    pub fn check_registry(&self, registry: &TypeRegistry) -> Result<()> {
        if &self.registry != registry {
            return Err(Error::InvalidInput(
                "refiner parameters were trained on a different schema".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> TypeRegistry {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        reg.add_relation("cites", "p", "p").unwrap();
        reg
    }

    #[test]
    fn layout_lists_incoming_relations() {
        let l = channel_layout(&reg());
        assert_eq!(l[0].len(), 2);
        assert_eq!(l[1].len(), 3);
        assert_eq!(
            l[1][2],
            Channel::Relation {
                relation: EdgeTypeId(1),
                source: NodeTypeId(1)
            }
        );
    }

    #[test]
    fn blocks_do_not_overlap() {
        let p = RefinerParams::identity(&reg(), 3, 2, Activation::Elu, true);
        assert_eq!(p.num_params(), 2 * 5 * 12);
        assert_eq!(p.offset(1, NodeTypeId(1), 2) + 12, p.num_params());
        assert_eq!(p.w(1, NodeTypeId(0), 1)[[2, 2]], 1.0);
        assert_eq!(p.q(0, NodeTypeId(1), 0).sum(), 0.0);
    }

    #[test]
    fn hmrp_round_trip() {
        let p = RefinerParams::perturbed_identity(&reg(), 4, 3, Activation::Tanh, false, 0.1, 7);
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let back = RefinerParams::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert!(RefinerParams::read(&mut &buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(RefinerParams::read(&mut buf.as_slice()).is_err());
    }
}
