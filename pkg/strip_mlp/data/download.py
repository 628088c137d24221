"""Dataset download client."""

import logging
import tarfile
import time
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import requests
from requests.exceptions import RequestException

from ..errors import DownloadError

CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR10_DIRNAME = "cifar-10-batches-bin"

CHUNK_SIZE = 1 << 20
MAX_RETRIES = 5
DEFAULT_RETRY_AFTER = 60


class DatasetDownloader:
    """HTTP client for fetching dataset archives."""

    def __init__(self, timeout: int = 60, max_retries: int = MAX_RETRIES) -> None:
        """Initialize the downloader.

        Args:
            timeout: Per-request timeout in seconds
            max_retries: How many rate-limited responses to wait out
        """
        self.timeout = timeout
        self.max_retries = max_retries
        self.logger = logging.getLogger(__name__)

    def _make_request(
        self,
        method: str,
        url: str,
        params: Optional[Dict[str, Any]] = None,
        attempt: int = 0,
    ) -> requests.Response:
        """Send a request, waiting out HTTP 429 responses.

        Args:
            method: HTTP method
            url: Absolute URL
            params: Query parameters
            attempt: Number of rate-limited retries already made

        Returns:
            The streamed response

        Raises:
            DownloadError: If the request fails or retries are exhausted
        """
        self.logger.debug(f"Making {method} request to {url}")

        try:
            response = requests.request(
                method=method,
                url=url,
                params=params,
                timeout=self.timeout,
                stream=True,
            )

            # Handle rate limiting
            if response.status_code == 429:
                response.close()
                if attempt >= self.max_retries:
                    raise DownloadError(f"Still rate limited after {attempt} retries: {url}")
                retry_after = _retry_delay(response.headers.get("Retry-After"))
                self.logger.warning(f"Rate limited. Retrying after {retry_after} seconds")
                time.sleep(retry_after)
                return self._make_request(method, url, params, attempt + 1)

            try:
                response.raise_for_status()
            except RequestException:
                response.close()
                raise
            return response

        except RequestException as e:
            self.logger.error(f"Download request failed: {e}")
            raise DownloadError(f"Download request failed: {e}")

    def download(self, url: str, dest: Union[str, Path]) -> Path:
        """Stream ``url`` into the file ``dest``.

        Args:
            url: Source URL
            dest: Target file; written through a temporary ``.part`` file

        Returns:
            Path of the written file
        """
        dest = Path(dest)
        dest.parent.mkdir(parents=True, exist_ok=True)
        partial = dest.with_name(dest.name + ".part")
        response = self._make_request("GET", url)
        written = 0
        try:
            with open(partial, "wb") as f:
                for chunk in response.iter_content(chunk_size=CHUNK_SIZE):
                    if chunk:
                        f.write(chunk)
                        written += len(chunk)
        except RequestException as e:
            partial.unlink(missing_ok=True)
            raise DownloadError(f"Download of {url} interrupted: {e}")
        except OSError as e:
            partial.unlink(missing_ok=True)
            raise DownloadError(f"Cannot write {partial}: {e}")
        finally:
            response.close()
        partial.replace(dest)
        self.logger.info(f"Downloaded {written:,} bytes to {dest}")
        return dest


def _retry_delay(value: Optional[str]) -> int:
    """Seconds to wait for a Retry-After header in either delta or HTTP-date form."""
    if value is None:
        return DEFAULT_RETRY_AFTER
    try:
        return max(0, int(value))
    except ValueError:
        pass
    try:
        when = parsedate_to_datetime(value)
    except (TypeError, ValueError):
        return DEFAULT_RETRY_AFTER
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    return max(0, int((when - datetime.now(timezone.utc)).total_seconds()))


def _inside(dest: Path, path: Path) -> bool:
    return dest == path or dest in path.parents


def extract_archive(archive: Union[str, Path], dest: Union[str, Path]) -> Path:
    """Unpack a .tar.gz archive into ``dest``.

    Members whose path, or whose link target, resolves outside ``dest`` are
    refused before anything is written.
    """
    dest = Path(dest).resolve()
    try:
        with tarfile.open(archive, "r:gz") as tar:
            for member in tar.getmembers():
                target = (dest / member.name).resolve()
                if not _inside(dest, target):
                    raise DownloadError(f"Archive member escapes the destination: {member.name}")
                if member.issym():
                    link = (target.parent / member.linkname).resolve()
                elif member.islnk():
                    link = (dest / member.linkname).resolve()
                else:
                    continue
                if not _inside(dest, link):
                    raise DownloadError(
                        f"Archive link escapes the destination: {member.name} -> {member.linkname}"
                    )
            if hasattr(tarfile, "data_filter"):
                tar.extractall(dest, filter="data")
            else:
                tar.extractall(dest)
    except tarfile.TarError as e:
        raise DownloadError(f"Cannot unpack {archive}: {e}")
    return dest


def fetch_cifar10(
    dest: Union[str, Path],
    url: str = CIFAR10_URL,
    downloader: Optional[DatasetDownloader] = None,
) -> Path:
    """Download and unpack the CIFAR-10 binary archive unless already present.

    Returns:
        The ``cifar-10-batches-bin`` directory
    """
    logger = logging.getLogger(__name__)
    dest = Path(dest)
    target = dest / CIFAR10_DIRNAME
    if target.is_dir() and any(target.glob("*.bin")):
        logger.info(f"CIFAR-10 already present in {target}")
        return target
    downloader = downloader or DatasetDownloader()
    archive = downloader.download(url, dest / url.rsplit("/", 1)[-1])
    extract_archive(archive, dest)
    if not target.is_dir():
        raise DownloadError(f"Archive did not contain {CIFAR10_DIRNAME}/")
    logger.info(f"CIFAR-10 ready in {target}")
    return target
