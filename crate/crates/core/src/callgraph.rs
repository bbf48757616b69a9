//! Inverse call graph with call-site granularity.
//!
//! Indirect call sites are resolved by signature matching: every function
//! whose signature structurally equals the site's signature is a candidate
//! callee. No points-to information is used.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::ir::{InstrId, InstrKind, InstrLoc, Program, Signature};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Direct(String),
    Indirect {
        signature: Signature,
        candidates: BTreeSet<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub caller: String,
    pub instr: InstrId,
    pub loc: InstrLoc,
    pub resolution: Resolution,
}

impl CallSite {
    /// Every function this site may transfer control to.
    pub fn callees(&self) -> Vec<&str> {
        match &self.resolution {
            Resolution::Direct(c) => vec![c.as_str()],
            Resolution::Indirect { candidates, .. } => {
                candidates.iter().map(String::as_str).collect()
            }
        }
    }

    pub fn is_indirect(&self) -> bool {
        matches!(self.resolution, Resolution::Indirect { .. })
    }
}

/// How indirect sites are resolved. `Ignore` drops every indirect edge and
/// exists for ablation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndirectPolicy {
    #[default]
    SignatureMatch,
    Ignore,
}

/// All functions whose signature equals `sig`, sorted by name.
pub fn match_signatures(p: &Program, sig: &Signature) -> BTreeSet<String> {
    p.functions
        .iter()
        .filter(|f| &f.signature() == sig)
        .map(|f| f.name.clone())
        .collect()
}

#[derive(Debug, Clone)]
pub struct InverseCallGraph {
    sites: Vec<CallSite>,
    by_instr: HashMap<InstrId, usize>,
    callers_of: BTreeMap<String, Vec<usize>>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallerEntry {
    pub caller: String,
    pub instr_id: String,
    pub kind: &'static str,
}

impl InverseCallGraph {
    pub fn build(p: &Program) -> Self {
        Self::build_with(p, IndirectPolicy::SignatureMatch)
    }

    pub fn build_with(p: &Program, policy: IndirectPolicy) -> Self {
        let mut sites = Vec::new();
        let mut warnings = Vec::new();
        let mut matched: HashMap<&Signature, BTreeSet<String>> = HashMap::new();
        for (loc, ins) in p.instructions() {
            let caller = p.functions[loc.func].name.clone();
            let resolution = match &ins.kind {
                InstrKind::Call { callee, .. } => Resolution::Direct(callee.clone()),
                InstrKind::CallIndirect { signature, .. } => {
                    let candidates = match policy {
                        IndirectPolicy::SignatureMatch => matched
                            .entry(signature)
                            .or_insert_with(|| match_signatures(p, signature))
                            .clone(),
                        IndirectPolicy::Ignore => BTreeSet::new(),
                    };
                    if candidates.is_empty() && policy == IndirectPolicy::SignatureMatch {
                        let msg = format!(
                            "indirect call {} in `{caller}` matches no function of signature {signature}",
                            ins.id
                        );
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                    Resolution::Indirect {
                        signature: signature.clone(),
                        candidates,
                    }
                }
                _ => continue,
            };
            sites.push(CallSite {
                caller,
                instr: ins.id,
                loc,
                resolution,
            });
        }

        let mut callers_of: BTreeMap<String, Vec<usize>> = p
            .functions
            .iter()
            .map(|f| (f.name.clone(), Vec::new()))
            .collect();
        for (i, site) in sites.iter().enumerate() {
            for callee in site.callees() {
                if let Some(list) = callers_of.get_mut(callee) {
                    list.push(i);
                }
            }
        }
        let by_instr = sites.iter().enumerate().map(|(i, s)| (s.instr, i)).collect();
        InverseCallGraph {
            sites,
            by_instr,
            callers_of,
            warnings,
        }
    }

    /// Call sites that may invoke `function`, in program order. Unknown
    /// functions have no callers.
    pub fn callers_of(&self, function: &str) -> impl Iterator<Item = &CallSite> + '_ {
        self.callers_of
            .get(function)
            .into_iter()
            .flatten()
            .map(|&i| &self.sites[i])
    }

    pub fn functions(&self) -> impl Iterator<Item = &str> + '_ {
        self.callers_of.keys().map(String::as_str)
    }

    /// Every call site in program order.
    pub fn sites(&self) -> &[CallSite] {
        &self.sites
    }

    pub fn site(&self, instr: InstrId) -> Option<&CallSite> {
        self.by_instr.get(&instr).map(|&i| &self.sites[i])
    }

    /// Diagnostics such as indirect sites without any candidate.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `{function: [{caller, instr_id, kind}]}` view used for JSON dumps.
    pub fn dump(&self) -> BTreeMap<String, Vec<CallerEntry>> {
        self.callers_of
            .iter()
            .map(|(f, idx)| {
                let entries = idx
                    .iter()
                    .map(|&i| {
                        let s = &self.sites[i];
                        CallerEntry {
                            caller: s.caller.clone(),
                            instr_id: s.instr.to_string(),
                            kind: if s.is_indirect() { "indirect" } else { "direct" },
                        }
                    })
                    .collect();
                (f.clone(), entries)
            })
            .collect()
    }
}
