import os
import logging
import tempfile
from pathlib import Path
from typing import Optional, Union

from errors import UnwritableDirectory

logger = logging.getLogger(__name__)


def cleanup_temp_file(file_path: Optional[str]) -> None:
    """一時ファイルを削除"""
    if file_path and os.path.exists(file_path):
        try:
            os.remove(file_path)
            logger.info(f"Cleaned up temporary file: {file_path}")
        except Exception as e:
            logger.error(f"Error cleaning up file {file_path}: {str(e)}")


def ensure_writable_dir(dir_path: Union[str, Path]) -> Path:
    """出力ディレクトリを作成し、書き込み可能か確認"""
    path = Path(dir_path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Error creating directory {path}: {str(e)}")
        raise UnwritableDirectory(path, str(e)) from None
    if not os.access(path, os.W_OK):
        raise UnwritableDirectory(path, "permission denied")
    return path


def write_text_atomic(file_path: Union[str, Path], content: str) -> Path:
    """一時ファイル経由でテキストを書き込む（同じ内容なら同じバイト列）"""
    path = Path(file_path)
    ensure_writable_dir(path.parent)

    fd, tmp_path = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
        os.replace(tmp_path, path)
    except OSError as e:
        cleanup_temp_file(tmp_path)
        logger.error(f"Error writing {path}: {str(e)}")
        raise UnwritableDirectory(path.parent, str(e)) from None
    return path


def get_file_size(file_path: Union[str, Path]) -> int:
    """ファイルサイズを取得（バイト）"""
    try:
        return os.path.getsize(file_path)
    except Exception as e:
        logger.error(f"Error getting file size: {str(e)}")
        return 0
