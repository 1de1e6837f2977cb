//! Text templates for container and launcher files. Kept free of host port
//! numbers where possible so that a port-base change only touches manifests
//! and the local launcher.

use std::collections::{BTreeMap, BTreeSet};

use super::{ChannelDecl, UnitManifest};
use crate::partition::Partition;
use crate::policy::{Capability, PolicyManifest};

pub const CONTAINER_PORT: u16 = 8080;

pub fn dockerfile(base_image: &str, unit: &str) -> String {
    format!(
        "FROM {base_image}\n\
         COPY dmasf /usr/local/bin/dmasf\n\
         COPY units/{unit}/manifest.json /etc/dmasf/manifest.json\n\
         ENV DMASF_UNIT={unit} \\\n    DMASF_PORT={CONTAINER_PORT} \\\n    DMASF_SPEC=/etc/dmasf/manifest.json \\\n    DMASF_PEERS={{}}\n\
         EXPOSE {CONTAINER_PORT}\n\
         HEALTHCHECK --interval=5s --timeout=3s --retries=5 CMD [\"/usr/local/bin/dmasf\", \"probe\", \"http://127.0.0.1:{CONTAINER_PORT}/healthz\"]\n\
         ENTRYPOINT [\"/usr/local/bin/dmasf\", \"unit\"]\n"
    )
}

pub fn service_names(unit: &str, replicas: u32) -> Vec<String> {
    if replicas <= 1 {
        vec![unit.to_string()]
    } else {
        (0..replicas).map(|i| format!("{unit}-{i}")).collect()
    }
}

pub fn network_name(a: &str, b: &str) -> String {
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    format!("net-{x}-{y}")
}

/// Drops any dependency that would close a cycle, taking channels in order.
fn acyclic_dependencies(channels: &[ChannelDecl]) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut deps: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for c in channels {
        let (from, to) = (c.from_unit.as_str(), c.to_unit.as_str());
        let mut stack = vec![to];
        let mut seen = BTreeSet::new();
        let mut cyclic = false;
        while let Some(n) = stack.pop() {
            if n == from {
                cyclic = true;
                break;
            }
            if seen.insert(n) {
                stack.extend(deps.get(n).into_iter().flatten().copied());
            }
        }
        if !cyclic {
            deps.entry(from).or_default().insert(to);
        }
    }
    deps
}

fn peer_json(peers: &BTreeSet<String>, replicas: &BTreeMap<String, u32>) -> String {
    let map: BTreeMap<&str, String> = peers
        .iter()
        .map(|p| {
            let hosts = service_names(p, replicas.get(p).copied().unwrap_or(1));
            (p.as_str(), hosts.iter().map(|h| format!("{h}:{CONTAINER_PORT}")).collect::<Vec<_>>().join(","))
        })
        .collect();
    crate::canonical::to_compact(&map)
}

pub fn compose(
    partition: &Partition,
    channels: &[ChannelDecl],
    replicas: &BTreeMap<String, u32>,
    policies: &BTreeMap<String, PolicyManifest>,
) -> String {
    let deps = acyclic_dependencies(channels);
    let networks: BTreeSet<String> = channels.iter().map(|c| network_name(&c.from_unit, &c.to_unit)).collect();
    let mut out = String::from("# Generated by dmasf. Regenerate instead of editing.\nservices:\n");
    for unit in &partition.units {
        let u = unit.name.as_str();
        let policy = &policies[u];
        let secrets: BTreeSet<String> = policy
            .capabilities
            .iter()
            .filter_map(|c| Capability::parse(c).ok()?.secret_name().map(str::to_string))
            .collect();
        let unit_networks: BTreeSet<String> = policy.allowed_peers.iter().map(|p| network_name(u, p)).collect();
        for service in service_names(u, replicas.get(u).copied().unwrap_or(1)) {
            out.push_str(&format!("  {service}:\n"));
            out.push_str(&format!("    build:\n      context: .\n      dockerfile: units/{u}/Dockerfile\n"));
            out.push_str(&format!("    image: dmasf-{u}:latest\n"));
            out.push_str("    environment:\n");
            out.push_str(&format!("      DMASF_PEERS: '{}'\n", peer_json(&policy.allowed_peers, replicas)));
            for s in &secrets {
                out.push_str(&format!("      {s}: ${{{s}}}\n"));
            }
            out.push_str(&format!("    labels:\n      dmasf.unit: {u}\n      dmasf.policy: policies/{u}.policy.json\n"));
            if !unit_networks.is_empty() {
                out.push_str("    networks:\n");
                for n in &unit_networks {
                    out.push_str(&format!("      - {n}\n"));
                }
            }
            if let Some(targets) = deps.get(u) {
                out.push_str("    depends_on:\n");
                for t in targets {
                    for s in service_names(t, replicas.get(*t).copied().unwrap_or(1)) {
                        out.push_str(&format!("      - {s}\n"));
                    }
                }
            }
        }
    }
    if !networks.is_empty() {
        out.push_str("networks:\n");
        for n in &networks {
            out.push_str(&format!("  {n}: {{}}\n"));
        }
    }
    out
}

pub fn run_local(manifests: &BTreeMap<String, UnitManifest>) -> String {
    let mut out = String::from(
        "#!/bin/sh\n\
         # Starts every unit as a local process. Set DMASF_BIN to the dmasf binary\n\
         # if it is not on PATH.\n\
         set -eu\n\
         cd \"$(dirname \"$0\")\"\n\
         BIN=\"${DMASF_BIN:-dmasf}\"\n\
         pids=\"\"\n\
         trap 'kill $pids 2>/dev/null || true' EXIT INT TERM\n",
    );
    for (unit, m) in manifests {
        let peers: BTreeMap<&str, String> =
            m.peers.iter().map(|(p, e)| (p.as_str(), format!("127.0.0.1:{}", e.port))).collect();
        out.push_str(&format!(
            "DMASF_UNIT={unit} DMASF_PORT={} DMASF_PEERS='{}' DMASF_SPEC=units/{unit}/manifest.json \"$BIN\" unit &\n\
             pids=\"$pids $!\"\n",
            m.port,
            crate::canonical::to_compact(&peers)
        ));
    }
    let ports: Vec<String> = manifests.values().map(|m| m.port.to_string()).collect();
    out.push_str(&format!(
        "for port in {}; do\n  \"$BIN\" probe --wait 30 \"http://127.0.0.1:$port/healthz\"\ndone\n\
         echo \"all units healthy\"\n\
         wait\n",
        ports.join(" ")
    ));
    out
}
