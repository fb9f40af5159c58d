class MixtureError(Exception):
    """ミクスチャエンジン共通の例外"""

    exit_code = 3


class ConfigError(MixtureError):
    """設定エラー（終了コード1）"""

    exit_code = 1


class DataError(MixtureError):
    """データエラー（終了コード2）"""

    exit_code = 2


# --- データ系 ---

class MissingFile(DataError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"File not found: {self.path}")


class DuplicateTask(DataError):
    def __init__(self, task_id: str):
        self.task_id = task_id
        super().__init__(f"Duplicate task_id: {task_id}")


class EmptySplit(DataError):
    def __init__(self, task_id: str, split: str):
        self.task_id = task_id
        self.split = split
        super().__init__(f"Task {task_id} has an empty {split} split")


class MalformedRecord(DataError):
    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {reason}")


class EmptyInput(DataError):
    def __init__(self, task_id: str = ""):
        super().__init__(f"Empty input text{f' for task {task_id}' if task_id else ''}")


class WrongModality(DataError):
    def __init__(self, task_id: str, expected: str):
        self.task_id = task_id
        super().__init__(f"Task {task_id} is not a {expected} task")


class NoTasks(DataError):
    def __init__(self, where: str = "manifest"):
        super().__init__(f"No tasks found in {where}")


class EmptyDev(DataError):
    def __init__(self, task_id: str):
        self.task_id = task_id
        super().__init__(f"Task {task_id} has no dev records")


class UnknownTask(DataError):
    def __init__(self, task_id: str):
        self.task_id = task_id
        super().__init__(f"Unknown task: {task_id}")


class RegistryMismatch(DataError):
    """重みとレジストリのタスク集合が一致しない"""


class TaxonomyNotApplicable(DataError):
    def __init__(self, rule: str, task_id: str):
        self.rule = rule
        self.task_id = task_id
        super().__init__(f"Rule {rule} cannot be applied to generation task {task_id}")


class UnwritableDirectory(DataError):
    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        super().__init__(f"Cannot write to {self.path}{f': {reason}' if reason else ''}")


# --- 設定系 ---

class InvalidParameter(ConfigError):
    def __init__(self, name: str, value, reason: str = ""):
        self.name = name
        self.value = value
        super().__init__(f"Invalid {name}={value!r}{f' ({reason})' if reason else ''}")


class UnsupportedMethod(ConfigError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"Unsupported method: {kind}")


class MixedScales(ConfigError):
    def __init__(self, baseline: float, score: float, scale: float):
        super().__init__(
            f"Metrics must both lie in [0, {scale:g}]: baseline={baseline}, score={score}"
        )


class StaleBaselines(ConfigError):
    """baselines.jsonが現在の設定と別の条件で作られている"""

    def __init__(self, path, expected: str, found):
        self.path = str(path)
        super().__init__(
            f"{self.path} was written for another configuration "
            f"(fingerprint {found or 'missing'}, expected {expected})"
        )
