from __future__ import annotations

import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv(dotenv_path=Path(__file__).with_name(".env"))

from singular_control_hub.cli.interface import CLIInterface  # noqa: E402


def main() -> None:
    try:
        status = CLIInterface().run(sys.argv[1:])
    except KeyboardInterrupt:
        print("\nПрерывание пользователем. Завершение работы.")
        status = 1
    sys.exit(status)


if __name__ == "__main__":
    main()
