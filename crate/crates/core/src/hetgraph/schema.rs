use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{GraphBuilder, HeteroGraph, NodeId, NodeTypeId, TypeRegistry};
use crate::error::{Error, Result};

/// Type declarations read from a flat key-value schema file:
///
/// ```text
/// node_type author
/// node_type paper
/// edge_type writes author paper
/// node_range author 0 4056
/// ```
///
/// `node_range` lines (inclusive bounds) declare numeric node ids of a type
/// without a separate node file.
#[derive(Clone, Debug, Default)]
pub struct Schema {
    pub registry: TypeRegistry,
    pub ranges: Vec<(NodeTypeId, u64, u64)>,
}

pub fn parse_schema(path: &Path) -> Result<Schema> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Schema::parse(BufReader::new(f), path)
}

impl Schema {
    pub fn parse(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut schema = Schema::default();
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["node_type", name] => {
                    schema.registry.add_node_type(name)?;
                }
                ["edge_type", name, src, dst] => {
                    schema.registry.add_relation(name, src, dst)?;
                }
                ["node_range", ty, lo, hi] => {
                    let t = schema
                        .registry
                        .node_type(ty)
                        .ok_or_else(|| Error::UnknownType(ty.to_string()))?;
                    let lo: u64 = lo.parse().map_err(|_| perr(i + 1, format!("bad bound `{lo}`")))?;
                    let hi: u64 = hi.parse().map_err(|_| perr(i + 1, format!("bad bound `{hi}`")))?;
                    if hi < lo {
                        return Err(perr(i + 1, "empty node range".into()));
                    }
                    schema.ranges.push((t, lo, hi));
                }
                _ => return Err(perr(i + 1, format!("unrecognised schema line `{line}`"))),
            }
        }
        if schema.registry.num_node_types() == 0 {
            return Err(Error::Config(format!(
                "{}: schema declares no node types",
                path.display()
            )));
        }
        Ok(schema)
    }
}

/// Loads a TSV edge file (`src <TAB> dst <TAB> edge_type [<TAB> weight]`).
///
/// Node types come from `node_file` rows (`node_id <TAB> node_type`) and from
/// the schema's `node_range` lines. Nodes are reindexed so each type forms a
/// contiguous block, in order of declaration; the original ids are kept on
/// the returned graph. Duplicate edges are merged by summing weights.
pub fn load_graph(edge_file: &Path, schema: &Schema, node_file: Option<&Path>) -> Result<HeteroGraph> {
    let registry = Arc::new(schema.registry.clone());
    let num_types = registry.num_node_types();
    let mut per_type: Vec<Vec<String>> = vec![Vec::new(); num_types];
    let mut seen: HashMap<String, NodeTypeId> = HashMap::new();

    for &(t, lo, hi) in &schema.ranges {
        for id in lo..=hi {
            let key = id.to_string();
            declare_node(&mut seen, &mut per_type, key, t)?;
        }
    }
    if let Some(path) = node_file {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(id), Some(ty)) = (cols.next(), cols.next()) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected `node_id <TAB> node_type`".into(),
                });
            };
            let t = registry
                .node_type(ty.trim())
                .ok_or_else(|| Error::UnknownType(ty.trim().to_string()))?;
            declare_node(&mut seen, &mut per_type, id.trim().to_string(), t)?;
        }
    }

    let counts: Vec<usize> = per_type.iter().map(Vec::len).collect();
    let mut original = Vec::with_capacity(seen.len());
    let mut index: HashMap<String, NodeId> = HashMap::with_capacity(seen.len());
    for ids in per_type {
        for id in ids {
            index.insert(id.clone(), original.len() as NodeId);
            original.push(id);
        }
    }
    if original.len() > u32::MAX as usize {
        return Err(Error::InvalidInput("more than 2^32 - 1 nodes".into()));
    }

    let mut builder = GraphBuilder::new(registry.clone(), &counts);
    let f = File::open(edge_file).map_err(|e| Error::io(edge_file, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(edge_file, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: edge_file.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(perr("expected `src <TAB> dst <TAB> edge_type [<TAB> weight]`".into()));
        }
        let rel = registry
            .relation(cols[2])
            .ok_or_else(|| Error::UnknownType(cols[2].to_string()))?;
        let weight = match cols.get(3) {
            Some(w) => w.parse::<f64>().map_err(|_| perr(format!("bad weight `{w}`")))?,
            None => 1.0,
        };
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::DanglingNode(id.to_string()))
        };
        let (u, v) = (lookup(cols[0])?, lookup(cols[1])?);
        builder.add_edge(rel, u, v, weight).map_err(|e| match e {
            Error::TypeMismatch(mut t) => {
                t.src = cols[0].to_string();
                t.dst = cols[1].to_string();
                Error::TypeMismatch(t)
            }
            Error::InvalidInput(msg) => perr(msg),
            e => e,
        })?;
    }
    Ok(builder.build().with_original_ids(Arc::new(original)))
}

fn declare_node(
    seen: &mut HashMap<String, NodeTypeId>,
    per_type: &mut [Vec<String>],
    id: String,
    t: NodeTypeId,
) -> Result<()> {
    match seen.get(&id) {
        Some(&prev) if prev == t => Ok(()),
        Some(_) => Err(Error::InvalidInput(format!(
            "node `{id}` declared with two different types"
        ))),
        None => {
            per_type[t.index()].push(id.clone());
            seen.insert(id, t);
            Ok(())
        }
    }
}

/// Writes the graph back out as schema, node and edge TSV files.
pub fn write_graph_tsv(g: &HeteroGraph, schema: &Path, nodes: &Path, edges: &Path) -> Result<()> {
    use std::io::Write;
    let reg = g.registry();
    let open = |p: &Path| -> Result<std::io::BufWriter<File>> {
        Ok(std::io::BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
    };
    let werr = |p: &Path| {
        let p: PathBuf = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };

    let mut w = open(schema)?;
    for name in reg.node_type_names() {
        writeln!(w, "node_type {name}").map_err(werr(schema))?;
    }
    for (_, r) in reg.relations() {
        writeln!(
            w,
            "edge_type {} {} {}",
            r.name,
            reg.node_type_name(r.source),
            reg.node_type_name(r.target)
        )
        .map_err(werr(schema))?;
    }
    w.flush().map_err(werr(schema))?;

    let mut w = open(nodes)?;
    for u in 0..g.num_nodes() as NodeId {
        writeln!(w, "{}\t{}", g.display_id(u), reg.node_type_name(g.node_type(u))).map_err(werr(nodes))?;
    }
    w.flush().map_err(werr(nodes))?;

    let mut w = open(edges)?;
    for (r, decl) in reg.relations() {
        for (u, v, wt) in g.edges(r) {
            if wt == 1.0 {
                writeln!(w, "{}\t{}\t{}", g.display_id(u), g.display_id(v), decl.name)
            } else {
                writeln!(w, "{}\t{}\t{}\t{}", g.display_id(u), g.display_id(v), decl.name, wt)
            }
            .map_err(werr(edges))?;
        }
    }
    w.flush().map_err(werr(edges))?;
    Ok(())
}
