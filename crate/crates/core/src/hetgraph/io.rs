//! Lossless binary graph snapshots (`HMGR`), used for coarsened levels whose
//! self weights and fractional edge weights the TSV format does not carry.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EdgeTypeId, GraphBuilder, HeteroGraph, NodeTypeId, TypeRegistry};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HMGR";
const VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn save_graph_binary(g: &HeteroGraph, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_graph(g, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_graph(g: &HeteroGraph, w: &mut impl Write) -> std::io::Result<()> {
    let reg = g.registry();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(reg.num_node_types() as u32)?;
    for name in reg.node_type_names() {
        write_str(w, name)?;
    }
    w.write_u32::<LittleEndian>(reg.num_relations() as u32)?;
    for (_, r) in reg.relations() {
        write_str(w, &r.name)?;
        w.write_u16::<LittleEndian>(r.source.0)?;
        w.write_u16::<LittleEndian>(r.target.0)?;
    }
    for t in 0..reg.num_node_types() {
        w.write_u64::<LittleEndian>(g.type_count(NodeTypeId(t as u16)) as u64)?;
    }
    for (r, _) in reg.relations() {
        w.write_u64::<LittleEndian>(g.num_relation_edges(r) as u64)?;
        for (u, v, wt) in g.edges(r) {
            w.write_u32::<LittleEndian>(u)?;
            w.write_u32::<LittleEndian>(v)?;
            w.write_f64::<LittleEndian>(wt)?;
        }
    }
    for &s in g.self_weights() {
        w.write_f64::<LittleEndian>(s)?;
    }
    match g.original_ids() {
        Some(ids) => {
            w.write_u8(1)?;
            for id in ids.iter() {
                write_str(w, id)?;
            }
        }
        None => w.write_u8(0)?,
    }
    Ok(())
}

pub fn load_graph_binary(path: &Path) -> Result<HeteroGraph> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_graph(&mut BufReader::new(f))
}

pub fn read_graph(r: &mut impl Read) -> Result<HeteroGraph> {
    let trunc = |e: std::io::Error| Error::Format(format!("truncated or corrupt graph file: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an HMGR graph file".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported HMGR version {version}")));
    }
    let mut reg = TypeRegistry::new();
    let nt = r.read_u32::<LittleEndian>().map_err(trunc)?;
    for _ in 0..nt {
        reg.add_node_type(&read_str(r).map_err(trunc)?)?;
    }
    let nr = r.read_u32::<LittleEndian>().map_err(trunc)?;
    for _ in 0..nr {
        let name = read_str(r).map_err(trunc)?;
        let s = r.read_u16::<LittleEndian>().map_err(trunc)? as usize;
        let t = r.read_u16::<LittleEndian>().map_err(trunc)? as usize;
        let names = reg.node_type_names();
        let (Some(s), Some(t)) = (names.get(s).cloned(), names.get(t).cloned()) else {
            return Err(Error::Format("relation references unknown node type".into()));
        };
        reg.add_relation(&name, &s, &t)?;
    }
    let mut counts = Vec::with_capacity(nt as usize);
    for _ in 0..nt {
        counts.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
    }
    let mut b = GraphBuilder::new(Arc::new(reg), &counts);
    for rel in 0..nr {
        let m = r.read_u64::<LittleEndian>().map_err(trunc)?;
        for _ in 0..m {
            let u = r.read_u32::<LittleEndian>().map_err(trunc)?;
            let v = r.read_u32::<LittleEndian>().map_err(trunc)?;
            let w = r.read_f64::<LittleEndian>().map_err(trunc)?;
            b.add_edge(EdgeTypeId(rel as u16), u, v, w)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    let n = b.num_nodes();
    for u in 0..n {
        let s = r.read_f64::<LittleEndian>().map_err(trunc)?;
        if s != 0.0 {
            b.add_self_weight(u as u32, s);
        }
    }
    let g = b.build();
    if r.read_u8().map_err(trunc)? == 1 {
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(read_str(r).map_err(trunc)?);
        }
        Ok(g.with_original_ids(Arc::new(ids)))
    } else {
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_graph_round_trip() {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        reg.add_relation("c", "p", "p").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg), &[2, 3]);
        b.add_edge(EdgeTypeId(0), 0, 2, 1.25).unwrap();
        b.add_edge(EdgeTypeId(0), 1, 4, 2.0).unwrap();
        b.add_edge(EdgeTypeId(1), 4, 3, 0.5).unwrap();
        b.add_self_weight(3, 7.0);
        let g = b.build();
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        let back = read_graph(&mut buf.as_slice()).unwrap();
        assert_eq!(back.registry(), g.registry());
        for u in 0..5 {
            assert_eq!(back.neighbors(u, None), g.neighbors(u, None));
        }
        assert_eq!(back.self_weights(), g.self_weights());
        assert!(read_graph(&mut &buf[..buf.len() - 3]).is_err());
    }
}
