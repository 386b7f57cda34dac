"""Operator command line: corpus generation, HL7 loading, dedup scanning,
linkage evaluation, client credential management, and the server itself.
"""

from __future__ import annotations

import json
import secrets
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import hl7, matching
from .auth import Scope, load_clients, make_client, save_clients
from .identity import DemographicProfile, Identifier


@click.group()
def main():
    """Master Patient Index operator tool."""


@main.command("gen")
@click.option("-n", "count", type=int, required=True, help="number of base records")
@click.option("--duplicate-rate", type=float, default=0.1, show_default=True)
@click.option("--name-typo", type=float, default=0.4, show_default=True)
@click.option("--dob-swap", type=float, default=0.25, show_default=True)
@click.option("--missing-nic", type=float, default=0.5, show_default=True)
@click.option("--address-variation", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", type=click.Path(), default="corpus.jsonl", show_default=True)
@click.option("--truth", type=click.Path(), default="truth.tsv", show_default=True)
def gen(count, duplicate_rate, name_typo, dob_swap, missing_nic,
        address_variation, seed, out, truth):
    """Generate a synthetic corpus with ground-truth duplicate pairs."""
    spec = corpus_mod.CorruptionSpec(
        duplicate_rate=duplicate_rate, p_name_typo=name_typo, p_dob_swap=dob_swap,
        p_missing_nic=missing_nic, p_address_variation=address_variation, seed=seed)
    records, pairs = corpus_mod.generate_corpus(count, spec)
    corpus_mod.write_corpus(records, pairs, out, truth)
    click.echo(f"wrote {len(records)} records to {out}, "
               f"{len(pairs)} truth pairs to {truth}")


def _token(client, url, client_id, secret):
    resp = client.post(f"{url}/token",
                       json={"client_id": client_id, "client_secret": secret})
    resp.raise_for_status()
    return resp.json()["access_token"]


@main.command("load")
@click.argument("records_file", type=click.Path(exists=True))
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--client-id", required=True)
@click.option("--secret", required=True)
@click.option("--id-map", "id_map_path", type=click.Path(), default=None,
              help="write placeholder-id -> PHN mapping here")
def load(records_file, url, client_id, secret, id_map_path):
    """Register a corpus into a running registry via HL7 A04 messages."""
    import httpx

    records = corpus_mod.read_corpus(records_file)
    id_map = {}
    rejected = 0
    with httpx.Client(timeout=30) as client:
        token = _token(client, url, client_id, secret)
        headers = {"Authorization": f"Bearer {token}",
                   "X-HL7-Encoding": "ER7"}
        for rec in records:
            profile = DemographicProfile.from_dict(rec["profile"])
            from .identity import PatientRecord, RecordStatus, IdentifierKind
            from .identity import phn_for_sequence
            # stand-in record purely to render the PID segment
            identifiers = {Identifier.from_dict(d) for d in rec["identifiers"]}
            placeholder_phn = phn_for_sequence(0)
            identifiers.add(Identifier(IdentifierKind.PHN, placeholder_phn))
            stub = PatientRecord(phn=placeholder_phn, profile=profile,
                                 identifiers=frozenset(identifiers),
                                 status=RecordStatus.active())
            message = hl7.build_adt(hl7.MessageKind.ADT_A04, stub,
                                    control_id=f"LOAD-{rec['id']}")
            # the placeholder PHN must not reach the registry
            pid = message.segment("PID")
            pid.fields[2] = [r for r in pid.fields[2]
                             if not (len(r) > 4 and r[4] == ["PHN"])] or [[[""]]]
            resp = client.post(f"{url}/hl7", content=hl7.emit_er7(message),
                               headers=headers)
            ack = hl7.parse_er7(resp.text)
            msa = ack.segment("MSA")
            if msa is not None and msa.value(1) == "AA":
                reason = msa.value(3)
                if reason.startswith("PHN "):
                    id_map[rec["id"]] = reason[4:]
            else:
                rejected += 1
    if id_map_path:
        with open(id_map_path, "w", encoding="utf-8") as fh:
            for placeholder, phn in id_map.items():
                fh.write(f"{placeholder}\t{phn}\n")
    click.echo(f"loaded {len(id_map)} records, {rejected} rejected")


@main.command("scan")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--client-id", required=True)
@click.option("--secret", required=True)
@click.option("--results", "results_path", type=click.Path(), default=None,
              help="write scored pairs (phn, phn, decision) here")
def scan(url, client_id, secret, results_path):
    """Run the dedup scan on a running registry and print the review queue."""
    import httpx

    with httpx.Client(timeout=120) as client:
        token = _token(client, url, client_id, secret)
        headers = {"Authorization": f"Bearer {token}"}
        resp = client.post(f"{url}/admin/scan", headers=headers)
        resp.raise_for_status()
        results = resp.json()
        queue = client.get(f"{url}/review-queue", headers=headers,
                           params={"format": "tsv"})
        queue.raise_for_status()
    if results_path:
        with open(results_path, "w", encoding="utf-8") as fh:
            for r in results:
                a, b = sorted(r["pair"])
                fh.write(f"{a}\t{b}\t{r['decision']}\n")
    click.echo(queue.text, nl=False)
    click.echo(f"scan produced {len(results)} candidate pairs", err=True)


@main.command("eval")
@click.option("--results", "results_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--id-map", "id_map_path", type=click.Path(exists=True), default=None,
              help="translate PHNs in results back to placeholder ids")
def eval_cmd(results_path, truth_path, id_map_path):
    """Precision/recall of a linkage result file against ground truth."""
    predicted = corpus_mod.read_pairs(results_path)
    truth = corpus_mod.read_pairs(truth_path)
    if id_map_path:
        reverse = {}
        with open(id_map_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    placeholder, phn = line.rstrip("\n").split("\t")
                    reverse[phn] = placeholder
        predicted = [(reverse.get(a, a), reverse.get(b, b), label)
                     for a, b, label in predicted]
    metrics = corpus_mod.evaluate_linkage(predicted, truth)
    click.echo(json.dumps(metrics, indent=2, sort_keys=True))


@main.group("client")
def client_group():
    """Manage API client credentials."""


@client_group.command("add")
@click.argument("client_id")
@click.option("--clients-file", type=click.Path(), required=True)
@click.option("--scopes", default="READ,WRITE", show_default=True,
              help="comma-separated: READ,WRITE,STEWARD,ADMIN")
@click.option("--secret", default=None, help="generated when omitted")
def client_add(client_id, clients_file, scopes, secret):
    clients = load_clients(clients_file)
    if client_id in clients:
        raise click.ClickException(f"client {client_id} already exists")
    secret = secret or secrets.token_urlsafe(24)
    scope_set = [Scope(s.strip()) for s in scopes.split(",") if s.strip()]
    clients[client_id] = make_client(client_id, secret, scope_set)
    save_clients(clients_file, clients)
    click.echo(f"client {client_id} added; secret: {secret}")


@client_group.command("rm")
@click.argument("client_id")
@click.option("--clients-file", type=click.Path(exists=True), required=True)
def client_rm(client_id, clients_file):
    clients = load_clients(clients_file)
    if client_id not in clients:
        raise click.ClickException(f"client {client_id} not found")
    del clients[client_id]
    save_clients(clients_file, clients)
    click.echo(f"client {client_id} removed")


@main.command("serve")
@click.option("--data-dir", type=click.Path(), required=True)
@click.option("--listen", default="127.0.0.1:8000", show_default=True)
@click.option("--clients-file", type=click.Path(exists=True), required=True)
@click.option("--comparator-config", type=click.Path(exists=True), default=None)
@click.option("--snapshot-every", type=int, default=100, show_default=True)
def serve(data_dir, listen, clients_file, comparator_config, snapshot_every):
    """Start the MPI registry server."""
    import uvicorn

    from .service import create_app

    app = create_app(data_dir, clients_file=clients_file,
                     comparator_config=comparator_config,
                     snapshot_every=snapshot_every)
    host, _, port = listen.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000),
                log_level="warning")


if __name__ == "__main__":
    main()
