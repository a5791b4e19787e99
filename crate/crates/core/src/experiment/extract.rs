use std::collections::BTreeSet;
use std::path::Path;

use crate::corpus::{Corpus, InstanceId, Level};
use crate::error::{Error, Result};
use crate::hulm::{extract_user_representation, Hulm, HulmOutput, Scope, UserDocument};
use crate::par;
use crate::repr::{
    aggregate_hierarchical, pool_document, EmbeddingTable, ModelKind, PoolOptions, Pooler,
    ReprSpec, UserVectorScheme,
};
use crate::toylm::checkpoint::Checkpoint;
use crate::toylm::{Family, HiddenStates, Tokenizer, ToyLm};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Toy(ToyLm),
    Hulm(Hulm),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Toy(m) => match m.family() {
                Family::Autoregressive => ModelKind::Autoregressive,
                Family::MaskedEncoder => ModelKind::MaskedEncoder,
            },
            TrainedModel::Hulm(h) => ModelKind::Hulm(h.hulm.mode),
        }
    }

    pub fn n_layers(&self) -> usize {
        match self {
            TrainedModel::Toy(m) => m.config.n_layers,
            TrainedModel::Hulm(h) => h.config().n_layers,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            TrainedModel::Toy(m) => m.save(path),
            TrainedModel::Hulm(h) => h.save(path),
        }
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        match Checkpoint::load(path)?.kind.as_str() {
            "toylm" => ToyLm::load(path).map(TrainedModel::Toy),
            "hulm" => Hulm::load(path).map(TrainedModel::Hulm),
            other => Err(Error::Data(format!("unknown checkpoint kind `{other}`"))),
        }
    }
}

/// Forward-pass results for every document or user of a corpus.
pub enum Extraction {
    Documents(Vec<(String, HiddenStates)>),
    Users(Vec<HulmOutput>),
}

pub fn user_documents(corpus: &Corpus, user: &str, tok: &Tokenizer) -> Vec<UserDocument> {
    corpus
        .user_documents(user)
        .iter()
        .map(|d| UserDocument {
            doc_id: d.doc_id.clone(),
            wave_id: d.wave_id,
            tokens: tok.encode(&d.text),
        })
        .collect()
}

fn stage_err(instance: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::stage("extract", Some(instance.to_string()), e)
}

pub fn run_forward(model: &TrainedModel, corpus: &Corpus, tok: &Tokenizer) -> Result<Extraction> {
    match model {
        TrainedModel::Toy(m) => {
            let docs = corpus.documents();
            let states = par::map(docs, |d| {
                let (ids, truncated) = m.frame(&tok.encode(&d.text));
                if truncated {
                    log::debug!("document `{}` truncated to {} tokens", d.doc_id, ids.len());
                }
                m.forward_hidden_states(&ids).map_err(stage_err(&d.doc_id))
            });
            let mut out = Vec::with_capacity(docs.len());
            for (d, s) in docs.iter().zip(states) {
                out.push((d.doc_id.clone(), s?));
            }
            Ok(Extraction::Documents(out))
        }
        TrainedModel::Hulm(h) => {
            let users: Vec<&str> = corpus.user_ids().collect();
            let outs = par::map(&users, |u| {
                let plan = h
                    .assemble(u, &user_documents(corpus, u, tok))
                    .map_err(stage_err(u))?;
                h.forward_user(&plan).map_err(stage_err(u))
            });
            outs.into_iter()
                .collect::<Result<Vec<_>>>()
                .map(Extraction::Users)
        }
    }
}

fn document_table(ex: &Extraction, spec: &ReprSpec, opts: &PoolOptions) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(spec.at_level(Level::Document));
    match ex {
        Extraction::Documents(docs) => {
            let vecs = par::map(docs, |(id, h)| {
                pool_document(h, spec.pooler, spec.layer, None, opts).map_err(stage_err(id))
            });
            for ((id, _), v) in docs.iter().zip(vecs) {
                table.insert(InstanceId::Document(id.clone()), v?)?;
            }
        }
        Extraction::Users(outs) => {
            for out in outs {
                for doc_id in out.plan.doc_ids() {
                    let v = if spec.pooler == Pooler::U {
                        out.document_state(doc_id).map(|s| s.vector.clone())
                    } else {
                        let view = out.document_view(doc_id).expect("doc from plan");
                        if view.hidden.token_ids.is_empty() {
                            None
                        } else {
                            Some(
                                pool_document(
                                    &view.hidden,
                                    spec.pooler,
                                    spec.layer,
                                    view.insep_position,
                                    opts,
                                )
                                .map_err(stage_err(doc_id))?,
                            )
                        }
                    };
                    match v {
                        Some(v) => table.insert(InstanceId::Document(doc_id.to_string()), v)?,
                        None => {
                            log::warn!("document `{doc_id}` has no {} representation", spec.pooler)
                        }
                    }
                }
            }
        }
    }
    Ok(table)
}

fn user_state_table(outs: &[HulmOutput], spec: &ReprSpec) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(spec.clone());
    for out in outs {
        let user = &out.plan.user_id;
        match spec.level {
            Level::User => table.insert(
                InstanceId::User(user.clone()),
                extract_user_representation(out, &Scope::All)?,
            )?,
            Level::Wave => {
                let waves: BTreeSet<u32> = out.plan.blocks.iter().map(|b| b.wave_id()).collect();
                for w in waves {
                    let v = extract_user_representation(out, &Scope::Wave(w))?;
                    table.insert(
                        InstanceId::Wave {
                            user_id: user.clone(),
                            wave_id: w,
                        },
                        v,
                    )?;
                }
            }
            Level::Document => unreachable!("handled by document_table"),
        }
    }
    Ok(table)
}

/// The embedding table of `spec` from a finished forward pass.
pub fn build_table(
    ex: &Extraction,
    kind: ModelKind,
    spec: &ReprSpec,
    corpus: &Corpus,
    user_vectors: UserVectorScheme,
    opts: &PoolOptions,
) -> Result<EmbeddingTable> {
    spec.check(kind)?;
    match (spec.pooler, spec.level, ex) {
        (Pooler::U, Level::Wave | Level::User, Extraction::Users(outs)) => {
            user_state_table(outs, spec)
        }
        (_, Level::Document, _) => document_table(ex, spec, opts),
        (_, level, _) => {
            let docs = document_table(ex, spec, opts)?;
            let mut t = aggregate_hierarchical(&docs, corpus, level, user_vectors)?;
            t.spec = Some(spec.clone());
            Ok(t)
        }
    }
}

/// Loads a checkpoint and tokenizer and pools one table over `corpus`.
pub fn export_from_checkpoint(
    checkpoint: &Path,
    tokenizer: &Path,
    corpus: &Corpus,
    spec: &ReprSpec,
    user_vectors: UserVectorScheme,
) -> Result<EmbeddingTable> {
    let model = TrainedModel::load(checkpoint)?;
    let tok = Tokenizer::load(tokenizer)?;
    let ex = run_forward(&model, corpus, &tok)?;
    build_table(
        &ex,
        model.kind(),
        spec,
        corpus,
        user_vectors,
        &PoolOptions::default(),
    )
}
