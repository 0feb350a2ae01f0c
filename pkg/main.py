import logging
import sys

from app.config import LOG_LEVEL

# Configure logging; diagnostics go to stderr, data to files or stdout
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)

from app.commands import build_parser
from app.exceptions import ConfigError, VTDError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args) or EXIT_OK
    except ConfigError as e:
        logger.error(f"{args.command}: {e.message}")
        print(f"{e.error_code}: {e.message}", file=sys.stderr)
        return EXIT_CONFIG
    except VTDError as e:
        logger.error(f"{args.command} failed: {e.detail}", exc_info=True)
        print(f"{e.error_code}: {e.message}", file=sys.stderr)
        return EXIT_FAILED
    except Exception as e:
        logger.error(f"{args.command} crashed: {e}", exc_info=True)
        print(f"INTERNAL_ERROR: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
