import pytest
from fastapi.testclient import TestClient
from main import app
import os
import shutil

from services.registry import (
    InputArity,
    LabelScheme,
    Modality,
    Record,
    Registry,
    TaskDataset,
    TaskSpec,
    load_tasks,
    save_manifest,
    write_records,
)


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def temp_dir(tmp_path):
    """テスト用の一時ディレクトリを準備"""
    test_temp_dir = str(tmp_path / "test_temp")
    os.makedirs(test_temp_dir, exist_ok=True)
    yield test_temp_dir
    # テスト後にクリーンアップ
    shutil.rmtree(test_temp_dir, ignore_errors=True)


def keyword_rows(words, n, offset=0):
    """ラベルごとのキーワード＋一意な埋め草語からなる分離可能なレコード"""
    rows = []
    for i in range(n):
        label = sorted(words)[i % len(words)]
        rows.append((f"{words[label]} x{offset + i}", label))
    return rows


def make_spec(task_id, modality=Modality.CLASSIFICATION, arity=InputArity.SINGLE_SENTENCE, scheme=LabelScheme.BINARY):
    return TaskSpec(
        task_id=task_id,
        modality=modality,
        input_arity=arity,
        label_scheme=scheme,
        prefix=f"{task_id}:",
    )


def make_dataset(spec, train_rows, dev_rows):
    return TaskDataset(
        task_id=spec.task_id,
        train=tuple(Record(f"{spec.prefix} {i}", t) for i, t in train_rows),
        dev=tuple(Record(f"{spec.prefix} {i}", t) for i, t in dev_rows),
        modality=spec.modality,
    )


def write_suite(out_dir, tasks):
    """(spec, train_rows, dev_rows) のリストをマニフェスト形式で書き出す"""
    paths = {}
    for spec, train_rows, dev_rows in tasks:
        train_name, dev_name = f"{spec.task_id}.train.jsonl", f"{spec.task_id}.dev.jsonl"
        write_records(os.path.join(out_dir, train_name), train_rows)
        write_records(os.path.join(out_dir, dev_name), dev_rows)
        paths[spec.task_id] = (train_name, dev_name)
    manifest = os.path.join(out_dir, "manifest.json")
    save_manifest(manifest, [spec for spec, _, _ in tasks], paths)
    return manifest


SENTIMENT = {"neg": "awful", "pos": "great"}
TOPIC = {"finance": "stock", "sports": "goal", "weather": "rain"}
ANSWER = {"answer_a": "apple", "answer_b": "banana"}


def tiny_tasks():
    return [
        (make_spec("sent"), keyword_rows(SENTIMENT, 48), keyword_rows(SENTIMENT, 12, offset=1000)),
        (
            make_spec("pair", arity=InputArity.SENTENCE_PAIR),
            keyword_rows(SENTIMENT, 16),
            keyword_rows(SENTIMENT, 8, offset=1000),
        ),
        (
            make_spec("topic", scheme=LabelScheme.MULTICLASS),
            keyword_rows(TOPIC, 60),
            keyword_rows(TOPIC, 12, offset=1000),
        ),
    ]


@pytest.fixture
def tiny_manifest(temp_dir):
    """分類タスク3つの小さなマニフェスト"""
    return write_suite(temp_dir, tiny_tasks())


@pytest.fixture
def tiny_registry(tiny_manifest) -> Registry:
    return load_tasks(tiny_manifest)


@pytest.fixture
def mixed_manifest(temp_dir):
    """分類タスク＋生成タスク"""
    generation = make_spec("qa", modality=Modality.GENERATION, scheme=LabelScheme.FREEFORM)
    tasks = tiny_tasks() + [(generation, keyword_rows(ANSWER, 20), keyword_rows(ANSWER, 6, offset=1000))]
    return write_suite(temp_dir, tasks)


def noisy_rows(n_clean=32, n_noisy=8):
    """ラベルを反転した学習レコードと、同じ本文・正しいラベルのdevレコード

    学習データを丸暗記すると（train正解率1.0）反転分のdevは必ず外れる。
    """
    words = ["awful", "great"]
    labels = ["neg", "pos"]
    train = [(f"{words[i % 2]} u{i} v{i}", labels[i % 2]) for i in range(n_clean)]
    train += [(f"{words[j % 2]} n{j} m{j}", labels[1 - j % 2]) for j in range(n_noisy)]
    dev = [(f"{words[j % 2]} n{j} m{j}", labels[j % 2]) for j in range(n_noisy)]
    dev += [(f"{words[i % 2]} d{i} e{i}", labels[i % 2]) for i in range(n_clean)]
    return train, dev


def slow_multiclass_rows(num_labels=20, words_per_label=20, n_train=800, n_dev=200, pool=50):
    """ラベル語＋共有の埋め草語6つ（devが数エポックかけて伸びる多クラスタスク）"""
    rows = []
    for i in range(n_train + n_dev):
        filler = " ".join(f"b{(i * 7919 + b * 104729 + i * i * 31) % pool}" for b in range(6))
        rows.append((f"l{i % num_labels}w{(i // num_labels) % words_per_label} {filler}", f"l{i % num_labels}"))
    return rows[:n_train], rows[n_train:]
