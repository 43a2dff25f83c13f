"""
Cache Manager Module
JSON cache for Monte Carlo estimate tables keyed by the run description
"""

import json
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Dict, Optional

from config import Config
from utils import canonical_json, hash_string


class CacheManager:
    """Stores estimate tables so repeated simulations with the same seed are skipped"""

    def __init__(self, cache_dir: Optional[Path] = None, enabled: Optional[bool] = None):
        self.cache_dir = Path(cache_dir or Config.CACHE_DIR)
        self.cache_dir.mkdir(exist_ok=True, parents=True)
        self.enabled = Config.CACHE_ENABLED if enabled is None else enabled
        self.hits = 0
        self.misses = 0

    def _generate_cache_key(self, description: Dict[str, Any]) -> str:
        """SHA-256 of the canonical run description"""
        return hash_string(canonical_json(description))

    def get(self, description: Dict[str, Any], max_age_hours: Optional[int] = None) -> Optional[Dict]:
        """Retrieve a cached result if present and fresh"""
        if not self.enabled:
            return None

        key = self._generate_cache_key(description)
        cache_file = self.cache_dir / f"{key}.json"

        if not cache_file.exists():
            self.misses += 1
            return None

        try:
            with open(cache_file, 'r', encoding='utf-8') as f:
                cache_data = json.load(f)

            max_age = max_age_hours or Config.CACHE_MAX_AGE_HOURS
            cached_time = datetime.fromisoformat(cache_data['timestamp'])
            if datetime.now() - cached_time > timedelta(hours=max_age):
                self.misses += 1
                return None

            self.hits += 1
            return cache_data['result']

        except (json.JSONDecodeError, KeyError, ValueError):
            cache_file.unlink(missing_ok=True)
            self.misses += 1
            return None

    def set(self, description: Dict[str, Any], result: Dict[str, Any]):
        """Store a result under its run description"""
        if not self.enabled:
            return

        key = self._generate_cache_key(description)
        cache_file = self.cache_dir / f"{key}.json"

        cache_data = {
            'timestamp': datetime.now().isoformat(),
            'description': json.loads(canonical_json(description)),
            'result': result,
        }

        try:
            with open(cache_file, 'w', encoding='utf-8') as f:
                json.dump(cache_data, f, indent=2)
        except OSError as e:
            print(f"Warning: Could not write cache: {e}")

    def clear(self, max_age_days: Optional[int] = None) -> int:
        """Remove cache files older than max_age_days"""
        max_age = max_age_days or Config.CACHE_MAX_AGE_DAYS
        cutoff = datetime.now() - timedelta(days=max_age)
        removed_count = 0

        for cache_file in self.cache_dir.glob("*.json"):
            try:
                if datetime.fromtimestamp(cache_file.stat().st_mtime) < cutoff:
                    cache_file.unlink()
                    removed_count += 1
            except OSError:
                pass

        if removed_count > 0:
            print(f"   [OK] Removed {removed_count} old cache file(s)")
        return removed_count

    def clear_all(self) -> int:
        """Clear the entire cache"""
        removed_count = 0
        for cache_file in self.cache_dir.glob("*.json"):
            try:
                cache_file.unlink()
                removed_count += 1
            except OSError:
                pass

        print(f"   [OK] Cleared {removed_count} cache file(s)")
        self.hits = 0
        self.misses = 0
        return removed_count

    def get_stats(self) -> Dict[str, Any]:
        """Hit counts and on-disk size"""
        total_requests = self.hits + self.misses
        hit_rate = (self.hits / total_requests * 100) if total_requests > 0 else 0

        cache_files = list(self.cache_dir.glob("*.json"))
        cache_size_mb = sum(f.stat().st_size for f in cache_files) / (1024 * 1024)

        return {
            'enabled': self.enabled,
            'hits': self.hits,
            'misses': self.misses,
            'hit_rate': hit_rate,
            'total_files': len(cache_files),
            'size_mb': round(cache_size_mb, 2),
        }

    def print_stats(self):
        stats = self.get_stats()
        print(f"Cache: {stats['total_files']} file(s), {stats['size_mb']} MB")
        print(f"   Hits: {stats['hits']}, misses: {stats['misses']} ({stats['hit_rate']:.1f}% hit rate)")
