"""Command-line pipeline driver: every stage reads and writes project-store
files and records a manifest entry (inputs, outputs, seeds, versions), so a
finished report can be traced back to the lexicon version, sample seed,
prompt hash, and endpoint identity that produced it.
"""

from __future__ import annotations

import json
import sys
import uuid
from pathlib import Path

import click
import yaml

from . import annotation as ann
from . import corpus as corpus_mod
from . import inference as inf
from . import lexicon as lex
from . import metrics as met
from . import scanner as scan_mod
from .store import ProjectStore
from .subscales import SUBSCALES, Subscale

DEFAULT_CONFIG = {
    "store": "project",
    "endpoint": {
        "base_url": "http://127.0.0.1:8000/v1",
        "model_name": "stub",
        "auth_env": "STIGMAKIT_API_TOKEN",
        "temperature": 0.0,
        "timeout": 30.0,
        "max_transport_retries": 3,
    },
    "lexicon": {"k": 20, "min_sim": 0.6},
    "sampling": {"target_total": 1332, "min_stratum_take": 10, "seed": 13},
    "split": {"seed": 7},
    "inference": {"shots": 0, "seed": 11, "concurrency": 4},
}


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(config.get(key), dict):
                config[key].update(value)
            else:
                config[key] = value
    return config


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config file; flags override it.")
@click.option("--store", "store_root", type=click.Path(), default=None,
              help="Project store root (default from config).")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, store_root: str | None) -> None:
    """Stigma-language extraction and evaluation pipeline."""
    config = load_config(config_path)
    if store_root:
        config["store"] = store_root
    ctx.obj = config


def _store(config: dict, writer: bool = True, create: bool = True) -> ProjectStore:
    return ProjectStore(config["store"], writer=writer, create=create)


@main.command()
@click.argument("notes", type=click.Path(exists=True))
@click.pass_obj
def ingest(config: dict, notes: str) -> None:
    """Validate and store raw clinical notes (line-delimited JSON)."""
    with _store(config) as store:
        errors: list[corpus_mod.IngestError] = []
        n = 0
        with open(store.notes_path, "w", encoding="utf-8") as out:
            for note in corpus_mod.ingest_corpus(notes, errors):
                out.write(json.dumps(note.__dict__, ensure_ascii=False) + "\n")
                n += 1
        with open(store.ingest_errors_path, "w", encoding="utf-8") as err:
            for error in errors:
                err.write(error.to_json() + "\n")
        store.manifest_append(
            "ingest",
            inputs=[notes],
            outputs=[store.notes_path, store.ingest_errors_path],
            params={"notes": n, "errors": len(errors)},
        )
        click.echo(f"ingested {n} notes, {len(errors)} malformed records")
        for error in errors:
            click.echo(f"  line {error.line_no}: {error.reason}", err=True)


@main.command()
@click.pass_obj
def segment(config: dict) -> None:
    """Split stored notes into sentences and drop exact-normalized duplicates."""
    with _store(config) as store:
        if not store.notes_path.exists():
            raise click.ClickException("no ingested notes; run ingest first")
        stats = corpus_mod.DedupStats()
        n_notes = 0

        def sentences():
            nonlocal n_notes
            for note in corpus_mod.ingest_corpus(store.notes_path):
                n_notes += 1
                yield from corpus_mod.segment(note)

        kept = corpus_mod.write_sentences(
            store.sentences_path, corpus_mod.dedup(sentences(), stats)
        )
        store.manifest_append(
            "segment",
            inputs=[store.notes_path],
            outputs=[store.sentences_path],
            params={"notes": n_notes, "sentences": kept, "duplicates_dropped": stats.dropped},
        )
        click.echo(f"{n_notes} notes -> {kept} sentences ({stats.dropped} duplicates dropped)")


def _load_lexicon(store: ProjectStore) -> lex.Lexicon:
    if store.lexicon_path.exists():
        return lex.Lexicon.load(store.lexicon_path)
    return lex.Lexicon()


@main.command("expand-lexicon")
@click.option("--embeddings", type=click.Path(exists=True), required=True,
              help="Text vector file: header 'count dim', then 'term v1 .. vd'.")
@click.option("--term", "terms", multiple=True,
              help="Query term(s); default: every approved term in the table.")
@click.option("--seed-terms", type=click.Path(exists=True), default=None,
              help="File of expert seed terms (one per line) added as approved.")
@click.option("--k", type=int, default=None, help="Neighbors per query term.")
@click.option("--min-sim", type=float, default=None, help="Cosine similarity floor.")
@click.pass_obj
def expand_lexicon(config: dict, embeddings: str, terms: tuple[str, ...],
                   seed_terms: str | None, k: int | None, min_sim: float | None) -> None:
    """Propose synonym keywords from embedding nearest neighbors."""
    k = k if k is not None else config["lexicon"]["k"]
    min_sim = min_sim if min_sim is not None else config["lexicon"]["min_sim"]
    with _store(config) as store:
        lexicon = _load_lexicon(store)
        if seed_terms:
            with open(seed_terms, "r", encoding="utf-8") as fh:
                for line in fh:
                    term = line.strip()
                    if term:
                        lexicon.add(term, source="seed", status="approved")
        table = lex.load_embeddings(embeddings)
        queries = list(terms) or [t for t in lexicon.approved_terms() if t in table]
        proposed = 0
        for query in queries:
            try:
                results = lex.propose_synonyms(query, table, lexicon, k=k, min_sim=min_sim)
            except lex.LexiconError as exc:
                click.echo(f"  {query}: {exc}", err=True)
                continue
            proposed += len(results)
            for candidate, sim in results:
                click.echo(f"  {query} -> {candidate} ({sim:.4f})")
        lexicon.save(store.lexicon_path)
        store.manifest_append(
            "expand-lexicon",
            inputs=[embeddings],
            outputs=[store.lexicon_path],
            params={"k": k, "min_sim": min_sim, "queries": queries,
                    "proposed": proposed, "lexicon_version": lexicon.version},
        )
        click.echo(f"{proposed} proposals; lexicon at version {lexicon.version}")


@main.command()
@click.option("--batch-size", type=int, default=10)
@click.option("--rng-seed", type=int, default=None)
@click.option("--harvest", type=click.Path(exists=True), default=None,
              help="File of newly found terms (one per line) to record as proposals.")
@click.option("--close", "close_flag", is_flag=True,
              help="Record the human judgment that no more keywords remain.")
@click.pass_obj
def snowball(config: dict, batch_size: int, rng_seed: int | None,
             harvest: str | None, close_flag: bool) -> None:
    """Sample note bundles for keyword harvesting, or record harvest results."""
    with _store(config) as store:
        lexicon = _load_lexicon(store)
        if harvest:
            with open(harvest, "r", encoding="utf-8") as fh:
                terms = [line.strip() for line in fh if line.strip()]
            lex.harvest_terms(lexicon, terms)
            lexicon.save(store.lexicon_path)
            store.manifest_append("snowball", inputs=[harvest], outputs=[store.lexicon_path],
                                  params={"harvested": len(terms)})
            click.echo(f"recorded {len(terms)} harvested terms as proposals")
            return
        if close_flag:
            lexicon.close_snowball()
            lexicon.save(store.lexicon_path)
            store.manifest_append("snowball", outputs=[store.lexicon_path],
                                  params={"closed": True})
            click.echo("snowball phase closed")
            return
        if not store.sentences_path.exists():
            raise click.ClickException("no segmented sentences; run segment first")
        seed = rng_seed if rng_seed is not None else config["sampling"]["seed"]
        sentences = corpus_mod.load_sentences(store.sentences_path)
        bundles = lex.snowball_batch(sentences, batch_size=batch_size, rng_seed=seed)
        out_path = store.root / "lexicon" / "snowball_batch.jsonl"
        with open(out_path, "w", encoding="utf-8") as fh:
            for bundle in bundles:
                fh.write(json.dumps({
                    "note_id": bundle.note_id,
                    "sentences": [s.text for s in bundle.sentences],
                }, ensure_ascii=False) + "\n")
        store.manifest_append("snowball", inputs=[store.sentences_path], outputs=[out_path],
                              params={"batch_size": batch_size, "rng_seed": seed})
        click.echo(f"wrote {len(bundles)} note bundles to {out_path}")


@main.command()
@click.argument("term")
@click.argument("decision", type=click.Choice(["approve", "reject"]))
@click.option("--reviewer", required=True)
@click.option("--override", is_flag=True)
@click.pass_obj
def review(config: dict, term: str, decision: str, reviewer: str, override: bool) -> None:
    """Approve or reject a proposed lexicon term."""
    with _store(config) as store:
        lexicon = _load_lexicon(store)
        try:
            keyword = lexicon.review(term, decision, reviewer, override=override)
        except lex.LexiconError as exc:
            raise click.ClickException(str(exc)) from exc
        lexicon.save(store.lexicon_path)
        store.manifest_append("review", outputs=[store.lexicon_path],
                              params={"term": term, "decision": decision, "reviewer": reviewer,
                                      "lexicon_version": lexicon.version})
        click.echo(f"{keyword.term}: {keyword.status} (lexicon version {lexicon.version})")


@main.command()
@click.option("--lexicon-version", type=int, default=None,
              help="Pin the approved-term set to an earlier lexicon version.")
@click.pass_obj
def scan(config: dict, lexicon_version: int | None) -> None:
    """Match approved keywords against all sentences in one pass."""
    with _store(config) as store:
        if not store.sentences_path.exists():
            raise click.ClickException("no segmented sentences; run segment first")
        lexicon = _load_lexicon(store)
        try:
            matcher = scan_mod.build_matcher(lexicon, version=lexicon_version)
        except scan_mod.ScannerError as exc:
            raise click.ClickException(str(exc)) from exc
        stats = scan_mod.ScanStats()
        sentences = corpus_mod.load_sentences(store.sentences_path)
        n = scan_mod.write_candidates(
            store.candidates_path, scan_mod.scan(sentences, matcher, stats)
        )
        store.manifest_append(
            "scan",
            inputs=[store.sentences_path, store.lexicon_path],
            outputs=[store.candidates_path],
            params={"lexicon_version": matcher.lexicon_version,
                    "sentences_scanned": stats.sentences_scanned,
                    "candidates": stats.candidates,
                    "unique_notes": stats.unique_notes},
        )
        click.echo(
            f"scanned {stats.sentences_scanned} sentences: {n} candidates "
            f"from {stats.unique_notes} unique notes (lexicon v{matcher.lexicon_version})"
        )


@main.command()
@click.option("--target-total", type=int, default=None)
@click.option("--min-stratum-take", type=int, default=None)
@click.option("--rng-seed", type=int, default=None)
@click.pass_obj
def sample(config: dict, target_total: int | None, min_stratum_take: int | None,
           rng_seed: int | None) -> None:
    """Stratified sample of candidates (by matched-keyword set) for annotation."""
    sampling = config["sampling"]
    target_total = target_total if target_total is not None else sampling["target_total"]
    min_stratum_take = (min_stratum_take if min_stratum_take is not None
                        else sampling["min_stratum_take"])
    rng_seed = rng_seed if rng_seed is not None else sampling["seed"]
    with _store(config) as store:
        if not store.candidates_path.exists():
            raise click.ClickException("no candidates; run scan first")
        candidates = scan_mod.load_candidates(store.candidates_path)
        result = scan_mod.stratified_sample(
            candidates, target_total, min_stratum_take=min_stratum_take, rng_seed=rng_seed
        )
        n = scan_mod.write_sample(store.sample_path, result)
        store.manifest_append(
            "sample",
            inputs=[store.candidates_path],
            outputs=[store.sample_path],
            params={"target_total": target_total, "min_stratum_take": min_stratum_take,
                    "rng_seed": rng_seed, "sampled": n, "warnings": result.warnings},
        )
        for warning in result.warnings:
            click.echo(f"warning: {warning}", err=True)
        click.echo(f"sampled {n} candidates into {store.sample_path}")


@main.command()
@click.option("--annotators", required=True, help="Comma-separated annotator ids.")
@click.option("--per-sentence", type=int, default=2)
@click.pass_obj
def assign(config: dict, annotators: str, per_sentence: int) -> None:
    """Assign sampled sentences to annotators (each sentence to N people)."""
    with _store(config) as store:
        if not store.sample_path.exists():
            raise click.ClickException("no sample; run sample first")
        items = scan_mod.load_sample(store.sample_path)
        ids = [item.candidate.sentence.sentence_id for item in items]
        try:
            assignments = ann.assign_tasks(
                ids, [a.strip() for a in annotators.split(",") if a.strip()], per_sentence
            )
        except ann.AnnotationError as exc:
            raise click.ClickException(str(exc)) from exc
        with open(store.assignments_path, "w", encoding="utf-8") as fh:
            for task in assignments:
                fh.write(json.dumps({"sentence_id": task.sentence_id,
                                     "annotator_id": task.annotator_id}) + "\n")
        store.manifest_append("assign", inputs=[store.sample_path],
                              outputs=[store.assignments_path],
                              params={"annotators": annotators, "per_sentence": per_sentence,
                                      "tasks": len(assignments)})
        click.echo(f"{len(assignments)} task assignments written")


@main.command()
@click.option("--annotator", "annotator_id", required=True)
@click.option("--role", type=click.Choice(["annotator", "adjudicator", "admin"]),
              default="annotator")
@click.option("--token", required=True)
@click.pass_obj
def session(config: dict, annotator_id: str, role: str, token: str) -> None:
    """Register an API session token for the annotation service."""
    with _store(config) as store:
        store.add_session(annotator_id, role, token)
        click.echo(f"session added for {annotator_id} ({role})")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8712)
@click.pass_obj
def serve(config: dict, host: str, port: int) -> None:
    """Run the annotation HTTP service on the project store."""
    from .service import serve as serve_app

    store = _store(config)
    try:
        serve_app(store, host=host, port=port)
    finally:
        store.release()


@main.command()
@click.pass_obj
def agreement(config: dict) -> None:
    """Inter-annotator agreement: per-subscale and pooled Cohen's kappa."""
    with _store(config) as store:
        if not store.records_path.exists():
            raise click.ClickException("no annotation records yet")
        records = ann.load_records(store.records_path)
        try:
            report = ann.pooled_entity_kappa(records)
        except ann.AnnotationError as exc:
            raise click.ClickException(str(exc)) from exc
        out_path = store.reports_dir / "agreement.csv"
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("scope,n,p_o,p_e,kappa,undefined\n")
            for row in report.to_rows():
                kappa = "" if row["kappa"] is None else f"{row['kappa']:.4f}"
                fh.write(f"{row['scope']},{row['n']},{row['p_o']:.4f},"
                         f"{row['p_e']:.4f},{kappa},{row['undefined']}\n")
        for row in report.to_rows():
            kappa = "undefined" if row["kappa"] is None else f"{row['kappa']:.4f}"
            click.echo(f"{row['scope']}: kappa={kappa} (n={row['n']}, p_o={row['p_o']:.4f})")
        if report.excluded:
            click.echo(f"excluded (not exactly 2 records): {report.excluded}", err=True)
        store.manifest_append("agreement", inputs=[store.records_path], outputs=[out_path],
                              params={"n_sentences": report.n_sentences,
                                      "excluded": len(report.excluded)})


@main.command()
@click.option("--include-negatives", is_flag=True,
              help="Keep stigma-negative sentences as all-absent gold rows.")
@click.pass_obj
def gold(config: dict, include_negatives: bool) -> None:
    """Build the adjudicated gold dataset (four binary subscale datasets)."""
    with _store(config) as store:
        if not store.records_path.exists():
            raise click.ClickException("no annotation records yet")
        records = ann.load_records(store.records_path)
        adjudications = (ann.load_adjudications(store.adjudications_path)
                         if store.adjudications_path.exists() else [])
        texts = {}
        if store.sample_path.exists():
            for item in scan_mod.load_sample(store.sample_path):
                texts[item.candidate.sentence.sentence_id] = item.candidate.sentence.text
        try:
            dataset = ann.build_gold(records, adjudications, texts,
                                     include_negatives=include_negatives)
        except ann.AnnotationError as exc:
            raise click.ClickException(str(exc)) from exc
        paths = ann.write_gold(dataset, store.gold_dir)
        store.manifest_append("gold",
                              inputs=[store.records_path, store.adjudications_path,
                                      store.sample_path],
                              outputs=list(paths.values()),
                              params={"n": len(dataset.labels),
                                      "include_negatives": include_negatives})
        if not any(l.any_positive() for l in dataset.labels.values()):
            click.echo("warning: gold dataset has zero positive labels", err=True)
        click.echo(f"gold dataset: {len(dataset.labels)} sentences")
        for row in dataset.table1_rows():
            click.echo(f"  {row['subscale']}: {row['yes']} ({row['yes_pct']:.1f}%) yes, "
                       f"{row['no']} ({row['no_pct']:.1f}%) no")


@main.command()
@click.option("--rng-seed", type=int, default=None)
@click.pass_obj
def split(config: dict, rng_seed: int | None) -> None:
    """Assign the shared 6:2:2 train/validation/test split."""
    rng_seed = rng_seed if rng_seed is not None else config["split"]["seed"]
    with _store(config) as store:
        dataset = ann.load_gold(store.gold_dir)
        try:
            ann.split_gold(dataset, rng_seed=rng_seed)
        except ann.AnnotationError as exc:
            raise click.ClickException(str(exc)) from exc
        paths = ann.write_gold(dataset, store.gold_dir)
        sizes = {name: sum(1 for v in dataset.split.values() if v == name)
                 for name in ann.SPLIT_NAMES}
        store.manifest_append("split", outputs=list(paths.values()),
                              params={"rng_seed": rng_seed, **sizes})
        click.echo(f"split sizes: {sizes['train']}/{sizes['validation']}/{sizes['test']} "
                   f"(seed {rng_seed})")


@main.command()
@click.option("--subscale", "subscale_name",
              type=click.Choice([s.value for s in SUBSCALES] + ["all"]), default="all")
@click.option("--shots", type=int, default=None)
@click.option("--rng-seed", type=int, default=None)
@click.option("--model", "model_name", default=None)
@click.option("--base-url", default=None)
@click.option("--run-id", default=None)
@click.option("--concurrency", type=int, default=None)
@click.pass_obj
def infer(config: dict, subscale_name: str, shots: int | None, rng_seed: int | None,
          model_name: str | None, base_url: str | None, run_id: str | None,
          concurrency: int | None) -> None:
    """Classify the gold test split through a chat-completion endpoint."""
    inference_cfg = config["inference"]
    endpoint_cfg = config["endpoint"]
    shots = shots if shots is not None else inference_cfg["shots"]
    rng_seed = rng_seed if rng_seed is not None else inference_cfg["seed"]
    concurrency = concurrency if concurrency is not None else inference_cfg["concurrency"]
    endpoint = inf.EndpointConfig(
        base_url=base_url or endpoint_cfg["base_url"],
        model_name=model_name or endpoint_cfg["model_name"],
        auth_env=endpoint_cfg.get("auth_env"),
        temperature=endpoint_cfg.get("temperature", 0.0),
        timeout=endpoint_cfg.get("timeout", 30.0),
        max_transport_retries=endpoint_cfg.get("max_transport_retries", 3),
    )
    run_id = run_id or uuid.uuid4().hex[:12]
    method = f"{shots}-shot"
    targets = SUBSCALES if subscale_name == "all" else (Subscale(subscale_name),)
    with _store(config) as store:
        dataset = ann.load_gold(store.gold_dir)
        if not dataset.split:
            raise click.ClickException("gold dataset has no split; run split first")
        run_dir = store.run_dir(run_id)
        predictions_path = run_dir / "predictions.jsonl"
        manifests = []
        all_predictions: list[inf.Prediction] = []
        for subscale in targets:
            test_items = [(sid, text) for sid, text, _label
                          in dataset.subscale_items(subscale, split="test")]
            pool = tuple((sid, text) for sid, text, label
                         in dataset.subscale_items(subscale, split="train") if label)
            template = inf.PromptTemplate.for_subscale(subscale)
            try:
                shot_config = inf.ShotConfig(shots=shots, example_pool=pool, rng_seed=rng_seed)
                predictions, manifest = inf.run_batch(
                    test_items, template, shot_config, endpoint,
                    run_id=run_id, concurrency=concurrency,
                )
            except inf.InferenceError as exc:
                raise click.ClickException(f"{subscale.value}: {exc}") from exc
            all_predictions.extend(predictions)
            manifests.append(manifest.__dict__)
            click.echo(f"  {subscale.value}: {len(predictions)} predictions, "
                       f"{manifest.n_failures} failures")
        inf.write_predictions(predictions_path, all_predictions, run_id=run_id)
        meta = {"run_id": run_id, "model": endpoint.model_name, "method": method,
                "shots": shots, "rng_seed": rng_seed, "batches": manifests}
        (run_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        store.manifest_append("infer", inputs=[store.gold_dir],
                              outputs=[predictions_path, run_dir / "meta.json"],
                              params={"run_id": run_id, "model": endpoint.model_name,
                                      "method": method, "shots": shots, "rng_seed": rng_seed})
        click.echo(f"run {run_id}: {len(all_predictions)} predictions "
                   f"({endpoint.model_name}, {method})")


@main.command("import-preds")
@click.argument("file", type=click.Path(exists=True))
@click.option("--model", "model_name", required=True)
@click.option("--method", required=True, help='e.g. "SFT" or "5-shot"')
@click.option("--run-id", default=None)
@click.pass_obj
def import_preds(config: dict, file: str, model_name: str, method: str,
                 run_id: str | None) -> None:
    """Import externally produced predictions for evaluation."""
    run_id = run_id or uuid.uuid4().hex[:12]
    with _store(config) as store:
        dataset = ann.load_gold(store.gold_dir)
        issues: list[inf.ImportIssue] = []
        predictions = inf.import_predictions(file, set(dataset.labels), issues)
        if not predictions:
            raise click.ClickException("no valid prediction rows in file")
        run_dir = store.run_dir(run_id)
        predictions_path = run_dir / "predictions.jsonl"
        inf.write_predictions(predictions_path, predictions, run_id=run_id)
        meta = {"run_id": run_id, "model": model_name, "method": method, "imported_from": file}
        (run_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        store.manifest_append("import-preds", inputs=[file], outputs=[predictions_path],
                              params={"run_id": run_id, "model": model_name, "method": method,
                                      "rows": len(predictions), "rejected": len(issues)})
        for issue in issues:
            click.echo(f"  line {issue.line_no}: {issue.reason}", err=True)
        click.echo(f"imported {len(predictions)} predictions as run {run_id} "
                   f"({len(issues)} rows rejected)")


def _load_run_predictions(run_dir: Path) -> list[inf.Prediction]:
    predictions = []
    with open(run_dir / "predictions.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            predictions.append(inf.Prediction(
                sentence_id=row["sentence_id"],
                subscale=Subscale(row["subscale"]),
                verdict=row["verdict"],
                failure_reason=row.get("failure_reason"),
                raw_response=row.get("raw_response", ""),
            ))
    return predictions


@main.command()
@click.option("--run", "run_ids", multiple=True, help="Run id(s); default: all runs.")
@click.pass_obj
def evaluate(config: dict, run_ids: tuple[str, ...]) -> None:
    """Score run predictions against gold into per-subscale confusion counts."""
    with _store(config) as store:
        dataset = ann.load_gold(store.gold_dir)
        dirs = ([store.runs_dir / rid for rid in run_ids] if run_ids
                else sorted(p for p in store.runs_dir.iterdir() if p.is_dir()))
        dirs = [d for d in dirs if (d / "predictions.jsonl").exists()]
        if not dirs:
            raise click.ClickException("no runs to evaluate")
        for run_dir in dirs:
            meta = json.loads((run_dir / "meta.json").read_text())
            predictions = _load_run_predictions(run_dir)
            evaluation = {"run_id": meta["run_id"], "model": meta["model"],
                          "method": meta["method"], "subscales": {}}
            for subscale in SUBSCALES:
                subset = [p for p in predictions if p.subscale == subscale]
                if not subset:
                    continue
                gold_labels = {sid: label for sid, _text, label
                               in dataset.subscale_items(subscale)}
                counts, n_failures, n_total = met.confusion(
                    [(p.sentence_id, p.verdict) for p in subset], gold_labels
                )
                evaluation["subscales"][subscale.value] = {
                    "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn,
                    "failures": n_failures, "total": n_total,
                }
            (run_dir / "evaluation.json").write_text(json.dumps(evaluation, indent=2) + "\n")
            store.manifest_append("evaluate", inputs=[run_dir / "predictions.jsonl"],
                                  outputs=[run_dir / "evaluation.json"],
                                  params={"run_id": meta["run_id"]})
            click.echo(f"evaluated run {meta['run_id']} ({meta['model']}, {meta['method']})")


@main.command()
@click.pass_obj
def report(config: dict) -> None:
    """Emit the overall micro table and four per-subscale macro tables."""
    with _store(config) as store:
        runs = []
        for run_dir in sorted(store.runs_dir.iterdir() if store.runs_dir.exists() else []):
            eval_path = run_dir / "evaluation.json"
            if not eval_path.exists():
                continue
            data = json.loads(eval_path.read_text())
            runs.append(met.RunResult(
                model=data["model"],
                method=data["method"],
                subscale_counts={
                    Subscale(name): met.ConfusionCounts(v["tp"], v["fp"], v["fn"], v["tn"])
                    for name, v in data["subscales"].items()
                },
                subscale_failures={Subscale(name): v["failures"]
                                   for name, v in data["subscales"].items()},
                subscale_totals={Subscale(name): v["total"]
                                 for name, v in data["subscales"].items()},
            ))
        if not runs:
            raise click.ClickException("no evaluated runs; run evaluate first")
        runs.sort(key=lambda r: (r.model, r.method))
        result = met.emit_report(runs)
        outputs = []
        micro_path = store.reports_dir / "report_micro.csv"
        micro_path.write_text(met.report_to_csv(result.micro_rows))
        outputs.append(micro_path)
        for subscale in SUBSCALES:
            path = store.reports_dir / f"report_{subscale.value}.csv"
            path.write_text(met.report_to_csv(result.macro_rows[subscale]))
            outputs.append(path)
        text_path = store.reports_dir / "report.txt"
        text_path.write_text(met.report_to_text(result))
        outputs.append(text_path)
        store.manifest_append("report", outputs=outputs,
                              params={"runs": len(runs), "flagged": result.flagged})
        click.echo(met.report_to_text(result))
        if result.flagged:
            click.echo("warning: some metrics hit zero denominators (flagged)", err=True)
            sys.exit(3)


if __name__ == "__main__":
    main()
