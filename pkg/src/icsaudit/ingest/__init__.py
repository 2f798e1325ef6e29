"""Acquire host records: NDJSON exports, the live search API, synthetic corpora."""
from .export import ExportStats, dump_export, dump_host, load_export, merge_records, parse_host_record, record_from_json
from .live import ApiCredentials, fetch_search
from .synth import CorpusSpec, FamilySpec, corpus_spec_from_json, generate_corpus, load_corpus_spec
