use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path as FsPath;

use super::{Link, LinkIdx, Network, NetworkError, Node, NodeIdx, OdPair, Path, PathId, Zone, ZoneId, SATURATION_FLOW_VPH};

const EARTH_RADIUS_M: f64 = 6_371_008.8;

fn malformed(file: &str, line: usize, msg: impl Into<String>) -> NetworkError {
    NetworkError::Malformed {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_f64(file: &str, rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64, NetworkError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .map_err(|_| malformed(file, line_of(rec), format!("bad {what} '{raw}'")))
}

/// Reads a node table. Columns `node_id,x,y[,is_junction]`; a table with
/// `lat,lon` columns instead of `x,y` is projected onto a local
/// equirectangular plane centred on the mean coordinate.
pub fn read_nodes<R: Read>(reader: R, file: &str) -> Result<Vec<Node>, NetworkError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "node_id").ok_or_else(|| malformed(file, 1, "missing node_id column"))?;
    let junction_col = column(&headers, "is_junction");
    let planar = match (column(&headers, "x"), column(&headers, "y")) {
        (Some(x), Some(y)) => Some((x, y)),
        _ => None,
    };
    let geo = match (column(&headers, "lat"), column(&headers, "lon")) {
        (Some(a), Some(o)) => Some((a, o)),
        _ => None,
    };
    let (a, b) = planar.or(geo).ok_or_else(|| malformed(file, 1, "need x,y or lat,lon columns"))?;

    let mut nodes = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(malformed(file, line_of(&rec), "empty node_id"));
        }
        let u = parse_f64(file, &rec, a, "coordinate")?;
        let v = parse_f64(file, &rec, b, "coordinate")?;
        let is_junction = match junction_col.and_then(|c| rec.get(c)) {
            None | Some("") => true,
            Some(s) => parse_bool(s).ok_or_else(|| malformed(file, line_of(&rec), format!("bad is_junction '{s}'")))?,
        };
        nodes.push(Node {
            id,
            x: u,
            y: v,
            is_junction,
        });
    }
    if planar.is_none() && !nodes.is_empty() {
        // x holds lat, y holds lon at this point.
        let lat0 = nodes.iter().map(|n| n.x).sum::<f64>() / nodes.len() as f64;
        let lon0 = nodes.iter().map(|n| n.y).sum::<f64>() / nodes.len() as f64;
        let k = lat0.to_radians().cos();
        for n in &mut nodes {
            let (lat, lon) = (n.x, n.y);
            n.x = EARTH_RADIUS_M * (lon - lon0).to_radians() * k;
            n.y = EARTH_RADIUS_M * (lat - lat0).to_radians();
        }
    }
    Ok(nodes)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a link table `link_id,from,to,length_m,speed_mps,lanes,capacity`
/// against an already-parsed node table. An empty capacity defaults to
/// `lanes × 1800` veh/h.
pub fn read_links<R: Read>(reader: R, file: &str, nodes: &[Node]) -> Result<Vec<Link>, NetworkError> {
    let node_index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| column(&headers, name).ok_or_else(|| malformed(file, 1, format!("missing {name} column")));
    let (c_id, c_from, c_to, c_len, c_speed) = (col("link_id")?, col("from")?, col("to")?, col("length_m")?, col("speed_mps")?);
    let c_lanes = column(&headers, "lanes");
    let c_cap = column(&headers, "capacity");

    let mut links = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let id = rec.get(c_id).unwrap_or("").to_string();
        let endpoint = |c: usize| -> Result<NodeIdx, NetworkError> {
            let nid = rec.get(c).unwrap_or("");
            node_index.get(nid).map(|&i| NodeIdx(i)).ok_or_else(|| NetworkError::DanglingNode {
                file: file.to_string(),
                line,
                link: id.clone(),
                node: nid.to_string(),
            })
        };
        let from = endpoint(c_from)?;
        let to = endpoint(c_to)?;
        let length = parse_f64(file, &rec, c_len, "length_m")?;
        let speed_limit = parse_f64(file, &rec, c_speed, "speed_mps")?;
        for (what, value) in [("length", length), ("speed", speed_limit)] {
            if value <= 0.0 || value.is_nan() {
                return Err(NetworkError::NonPositive {
                    file: file.to_string(),
                    line,
                    link: id,
                    what,
                    value,
                });
            }
        }
        let lanes = match c_lanes.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            None => 1,
            Some(s) => s
                .parse::<u32>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| malformed(file, line, format!("bad lanes '{s}'")))?,
        };
        let capacity_vph = match c_cap.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            None => f64::from(lanes) * SATURATION_FLOW_VPH,
            Some(_) => {
                let v = parse_f64(file, &rec, c_cap.unwrap(), "capacity")?;
                if v < 0.0 {
                    return Err(malformed(file, line, "negative capacity"));
                }
                v
            }
        };
        links.push(Link {
            id,
            from,
            to,
            length,
            speed_limit,
            lanes,
            capacity_vph,
        });
    }
    Ok(links)
}

/// Loads and validates `links.csv` + `nodes.csv`.
pub fn load_network(links_csv: &FsPath, nodes_csv: &FsPath) -> Result<Network, NetworkError> {
    let nodes = read_nodes(std::fs::File::open(nodes_csv)?, &nodes_csv.display().to_string())?;
    let links = read_links(std::fs::File::open(links_csv)?, &links_csv.display().to_string(), &nodes)?;
    let net = Network::new(nodes, links)?;
    log::info!("loaded network: {} nodes, {} links", net.num_nodes(), net.num_links());
    Ok(net)
}

pub fn write_network<W1: Write, W2: Write>(net: &Network, links: W1, nodes: W2) -> Result<(), NetworkError> {
    let mut w = csv::Writer::from_writer(nodes);
    w.write_record(["node_id", "x", "y", "is_junction"])?;
    for n in net.nodes() {
        w.write_record([n.id.clone(), n.x.to_string(), n.y.to_string(), u8::from(n.is_junction).to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(links);
    w.write_record(["link_id", "from", "to", "length_m", "speed_mps", "lanes", "capacity"])?;
    for l in net.links() {
        w.write_record([
            l.id.clone(),
            net.node(l.from).id.clone(),
            net.node(l.to).id.clone(),
            l.length.to_string(),
            l.speed_limit.to_string(),
            l.lanes.to_string(),
            l.capacity_vph.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Zone assignment table `link_id,zone_id`.
pub fn load_zones<R: Read>(reader: R, net: &Network) -> Result<Vec<Zone>, NetworkError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut by_zone: BTreeMap<ZoneId, BTreeSet<LinkIdx>> = BTreeMap::new();
    let mut seen: HashMap<LinkIdx, ZoneId> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let lid = rec.get(0).unwrap_or("");
        let link = net.link_by_id(lid).ok_or_else(|| NetworkError::UnknownLink(lid.to_string()))?;
        let zone = rec
            .get(1)
            .and_then(|s| s.parse::<u32>().ok())
            .map(ZoneId)
            .ok_or_else(|| malformed("zones", line, "bad zone_id"))?;
        if let Some(prev) = seen.insert(link, zone) {
            return Err(NetworkError::ZoneOverlap {
                link: lid.to_string(),
                first: prev.0,
                second: zone.0,
            });
        }
        by_zone.entry(zone).or_default().insert(link);
    }
    Ok(by_zone.into_iter().map(|(id, member_links)| Zone { id, member_links }).collect())
}

pub fn write_zones<W: Write>(zones: &[Zone], net: &Network, out: W) -> Result<(), NetworkError> {
    let mut rows: Vec<(LinkIdx, ZoneId)> = zones.iter().flat_map(|z| z.member_links.iter().map(move |&l| (l, z.id))).collect();
    rows.sort();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["link_id", "zone_id"])?;
    for (l, z) in rows {
        w.write_record([net.link(l).id.clone(), z.0.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Path set table `path_id,od_origin,od_dest,links` with links separated by
/// spaces.
pub fn write_paths<W: Write>(paths: &[Path], net: &Network, out: W) -> Result<(), NetworkError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "od_origin", "od_dest", "links"])?;
    for p in paths {
        let links: Vec<&str> = p.links.iter().map(|&l| net.link(l).id.as_str()).collect();
        w.write_record([
            p.id.0.to_string(),
            p.od.origin.0.to_string(),
            p.od.destination.0.to_string(),
            links.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_paths<R: Read>(reader: R, net: &Network) -> Result<Vec<Path>, NetworkError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| malformed("paths", line, "bad integer field"))
        };
        let (id, o, d) = (num(0)?, num(1)?, num(2)?);
        let links = rec
            .get(3)
            .unwrap_or("")
            .split_whitespace()
            .map(|s| net.link_by_id(s).ok_or_else(|| NetworkError::UnknownLink(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if !net.validate_path(&links) {
            return Err(NetworkError::InvalidPath(id));
        }
        out.push(Path {
            id: PathId(id),
            od: OdPair::new(o, d),
            links,
        });
    }
    Ok(out)
}
